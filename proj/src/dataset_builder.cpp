#include "kforge/dataset_builder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

namespace kforge {

std::string grid_file_name(double corruption_p) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "dataset_p%.1f.jsonl", corruption_p);
    return buf;
}
namespace {

template <typename E, std::size_t N>
E enum_from(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table)
        if (name == s) return value;
    throw Error(ErrorCode::InvalidArgument, std::string("unknown ") + what + ": " + std::string(s));
}

constexpr std::array<std::pair<std::string_view, Strategy>, 4> kStrategies{{
    {"dsf", Strategy::DSF}, {"raft", Strategy::RAFT}, {"ca_raft", Strategy::CA_RAFT}, {"pa_rag", Strategy::PA_RAG}}};
constexpr std::array<std::pair<std::string_view, AssignmentPolicy>, 3> kPolicies{{
    {"per_qa", AssignmentPolicy::PerQA},
    {"per_question", AssignmentPolicy::PerQuestion},
    {"per_chapter", AssignmentPolicy::PerChapter}}};
constexpr std::array<std::pair<std::string_view, Bucket>, 3> kBuckets{{
    {"success", Bucket::Success}, {"failure", Bucket::Failure}, {"none", Bucket::None}}};
constexpr std::array<std::pair<std::string_view, ReplayCategory>, 7> kCategories{{
    {"code", ReplayCategory::Code},
    {"math", ReplayCategory::Math},
    {"reasoning", ReplayCategory::Reasoning},
    {"extraction", ReplayCategory::Extraction},
    {"safety", ReplayCategory::Safety},
    {"writing", ReplayCategory::Writing},
    {"other", ReplayCategory::Other}}};

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& table) noexcept {
    for (const auto& [name, value] : table)
        if (value == v) return name;
    return "?";
}

// Passage cut from the start of the gold chunk, at most passage_tokens tokens.
Passage synthetic_oracle(const Corpus& corpus, const Chunk& gold, std::size_t passage_tokens) {
    const auto text = corpus.text_of(gold);
    const auto spans = token_spans(text);
    std::size_t end = text.size();
    if (spans.size() > passage_tokens) end = spans[passage_tokens].begin;
    Passage p;
    p.id = gold.id + "#oracle";
    p.doc_id = gold.doc_id;
    p.span = {gold.span.begin, gold.span.begin + end};
    p.text = std::string(text.substr(0, end));
    p.token_count = std::min(spans.size(), passage_tokens);
    return p;
}

struct ExampleSpec {
    std::size_t pair = 0;
    std::size_t answer_index = 0;
    std::string mode;
    Bucket bucket = Bucket::None;
};

}  // namespace

std::string_view to_string(Strategy s) noexcept { return enum_name(s, kStrategies); }
std::string_view to_string(AssignmentPolicy p) noexcept { return enum_name(p, kPolicies); }
std::string_view to_string(Bucket b) noexcept { return enum_name(b, kBuckets); }
std::string_view to_string(Origin o) noexcept { return o == Origin::Domain ? "domain" : "replay"; }
std::string_view to_string(ReplayCategory c) noexcept { return enum_name(c, kCategories); }
Strategy strategy_from_string(std::string_view s) { return enum_from(s, kStrategies, "strategy"); }
AssignmentPolicy policy_from_string(std::string_view s) { return enum_from(s, kPolicies, "assignment policy"); }
Bucket bucket_from_string(std::string_view s) { return enum_from(s, kBuckets, "bucket"); }
ReplayCategory category_from_string(std::string_view s) { return enum_from(s, kCategories, "replay category"); }

void DatasetConfig::validate() const {
    if (!(corruption_p >= 0.0 && corruption_p <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "corruption_p must be in [0, 1]");
    if (k_passages < 1) throw Error(ErrorCode::InvalidArgument, "k_passages must be >= 1");
    if (max_paraphrases < 1) throw Error(ErrorCode::InvalidArgument, "max_paraphrases must be >= 1");
    if (!(replay_ratio >= 0.0) || !std::isfinite(replay_ratio))
        throw Error(ErrorCode::InvalidArgument, "replay_ratio must be >= 0");
    if (retrieval_depth < 1) throw Error(ErrorCode::InvalidArgument, "retrieval_depth must be >= 1");
    if (assignment_policy == AssignmentPolicy::PerChapter && chapter_map.empty())
        throw Error(ErrorCode::MissingChapterMap, "per_chapter assignment needs a chapter map");
}

Bucket assign_bucket(const BucketKey& key, AssignmentPolicy policy, double corruption_p, const DatasetConfig& cfg) {
    switch (policy) {
        case AssignmentPolicy::PerChapter: {
            auto it = cfg.chapter_map.find(key.chapter);
            if (it == cfg.chapter_map.end() && !key.chapter_title.empty()) it = cfg.chapter_map.find(key.chapter_title);
            if (it == cfg.chapter_map.end())
                throw Error(ErrorCode::MissingChapterMap, "no chapter map entry for " + key.chapter);
            return it->second;
        }
        case AssignmentPolicy::PerQuestion: {
            auto rng = Rng::keyed(cfg.seed, "bucket|q|" + key.question_id);
            return rng.bernoulli(corruption_p) ? Bucket::Failure : Bucket::Success;
        }
        case AssignmentPolicy::PerQA:
        default: {
            auto rng = Rng::keyed(cfg.seed, "bucket|qa|" + key.question_id + "|" + std::to_string(key.answer_index));
            return rng.bernoulli(corruption_p) ? Bucket::Failure : Bucket::Success;
        }
    }
}

Bucket assign_bucket(const BucketKey& key, const DatasetConfig& cfg) {
    return assign_bucket(key, cfg.assignment_policy, cfg.corruption_p, cfg);
}

bool overlaps_gold(const Passage& p, const Chunk& gold) {
    return p.doc_id == gold.doc_id && p.span.intersects(gold.span);
}

ContextResult build_context(const Index& index, const Corpus& corpus, const Chunk& gold, std::string_view question,
                            Bucket bucket, std::size_t k, Rng& rng, std::size_t retrieval_depth) {
    if (!index.built()) throw Error(ErrorCode::IndexNotBuilt, "index has not been built or loaded");
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    ContextResult out;
    if (bucket == Bucket::None) return out;

    const auto retrieved = index.search(question, std::max(retrieval_depth, k));
    const bool success = bucket == Bucket::Success;
    const std::size_t need = success ? k - 1 : k;

    std::optional<Passage> oracle;
    std::vector<const Passage*> distractors;
    std::set<std::string_view> chosen;
    for (const auto& r : retrieved) {
        const auto& p = index.at(r.passage_id);
        if (overlaps_gold(p, gold)) {
            if (success && !oracle) oracle = p;
        } else if (distractors.size() < need) {
            distractors.push_back(&p);
            chosen.insert(p.id);
        }
    }
    if (success && !oracle) {
        const Passage* best = nullptr;
        std::size_t best_overlap = 0;
        for (const auto* p : index.intersecting(gold.doc_id, gold.span)) {
            const auto overlap = std::min(p->span.end, gold.span.end) - std::max(p->span.begin, gold.span.begin);
            if (!best || overlap > best_overlap) best = p, best_overlap = overlap;
        }
        oracle = best ? *best : synthetic_oracle(corpus, gold, index.passage_tokens());
    }

    if (distractors.size() < need) {
        std::vector<const Passage*> pool;
        std::size_t non_overlapping = 0;
        for (const auto& p : index.passages()) {
            if (overlaps_gold(p, gold)) continue;
            ++non_overlapping;
            if (!chosen.count(p.id)) pool.push_back(&p);
        }
        if (non_overlapping == 0)
            throw Error(ErrorCode::InsufficientDistractors, "index has no passage outside chunk " + gold.id);
        // Partial Fisher-Yates over the unused pool, then draws with replacement.
        for (std::size_t i = 0; i < pool.size() && distractors.size() < need; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
            distractors.push_back(pool[i]);
        }
        if (distractors.size() < need) {
            std::vector<const Passage*> all;
            for (const auto& p : index.passages())
                if (!overlaps_gold(p, gold)) all.push_back(&p);
            while (distractors.size() < need) distractors.push_back(all[rng.below(all.size())]);
        }
    }

    for (const auto* p : distractors) out.passages.push_back(*p);
    if (success) {
        const auto slot = static_cast<std::size_t>(rng.below(k));
        out.passages.insert(out.passages.begin() + static_cast<std::ptrdiff_t>(slot), std::move(*oracle));
        out.oracle_position = slot + 1;
    }
    return out;
}

DatasetResult build_dataset(const std::vector<QAPair>& pairs, const DatasetConfig& cfg, const Index& index,
                            const Corpus& corpus, const std::vector<ReplayItem>& replay, std::size_t jobs) {
    cfg.validate();
    DatasetResult result;

    std::vector<const QAPair*> train;
    for (const auto& p : pairs)
        if (p.split == Split::Train) train.push_back(&p);
    if (train.empty()) throw Error(ErrorCode::EmptyTrainSplit, "no pairs in the train split");
    if (cfg.strategy != Strategy::DSF && !index.built())
        throw Error(ErrorCode::IndexNotBuilt, "strategy " + std::string(to_string(cfg.strategy)) + " needs an index");

    auto key_for = [&](const QAPair& p, std::size_t answer) {
        const auto& gold = corpus.chunk(p.source_chunk_id);
        const auto* doc = corpus.find_document(gold.doc_id);
        return BucketKey{p.id, answer, gold.doc_id, doc ? doc->title : std::string()};
    };
    // RAFT draws once per question unless chapters decide.
    const auto question_policy = cfg.assignment_policy == AssignmentPolicy::PerChapter
                                     ? AssignmentPolicy::PerChapter
                                     : AssignmentPolicy::PerQuestion;

    std::vector<ExampleSpec> specs;
    switch (cfg.strategy) {
        case Strategy::DSF:
            for (std::size_t i = 0; i < train.size(); ++i) specs.push_back({i, 0, "dsf", Bucket::None});
            break;
        case Strategy::RAFT:
            for (std::size_t i = 0; i < train.size(); ++i)
                specs.push_back({i, 0, "raft", assign_bucket(key_for(*train[i], 0), question_policy, cfg.corruption_p, cfg)});
            break;
        case Strategy::CA_RAFT:
            for (std::size_t i = 0; i < train.size(); ++i) specs.push_back({i, 0, "raft0", Bucket::Success});
            for (std::size_t i = 0; i < train.size(); ++i) specs.push_back({i, 0, "raft1", Bucket::Failure});
            for (std::size_t i = 0; i < train.size(); ++i)
                specs.push_back({i, 0, "raftp", assign_bucket(key_for(*train[i], 0), question_policy, cfg.corruption_p, cfg)});
            break;
        case Strategy::PA_RAG:
            for (std::size_t i = 0; i < train.size(); ++i) {
                const auto n = std::min(train[i]->answers.size(), cfg.max_paraphrases);
                for (std::size_t a = 0; a < n; ++a)
                    specs.push_back({i, a, "pa_rag", assign_bucket(key_for(*train[i], a), cfg)});
            }
            break;
    }

    std::vector<TrainingExample> domain(specs.size());
    parallel_for(specs.size(), jobs, [&](std::size_t s) {
        const auto& spec = specs[s];
        const auto& pair = *train[spec.pair];
        auto& ex = domain[s];
        ex.question_id = pair.id;
        ex.example_id = pair.id + ":" + spec.mode + (cfg.strategy == Strategy::PA_RAG
                                                          ? ":a" + std::to_string(spec.answer_index)
                                                          : std::string());
        ex.bare_question = pair.question;
        ex.domain_identifier = cfg.domain_identifier;
        ex.question = cfg.domain_identifier ? *cfg.domain_identifier + " " + pair.question : pair.question;
        ex.answer = pair.answers.at(spec.answer_index);
        ex.answer_index = spec.answer_index;
        ex.bucket = spec.bucket;
        ex.origin = Origin::Domain;
        ex.strategy = cfg.strategy;
        ex.mode = spec.mode;
        ex.source_chunk_id = pair.source_chunk_id;
        if (spec.bucket != Bucket::None) {
            auto rng = Rng::keyed(cfg.seed, "context|" + ex.example_id);
            auto ctx = build_context(index, corpus, corpus.chunk(pair.source_chunk_id), pair.question, spec.bucket,
                                     cfg.k_passages, rng, cfg.retrieval_depth);
            ex.context = std::move(ctx.passages);
            ex.oracle_position = ctx.oracle_position;
            ex.oracle_present = ctx.oracle_position.has_value();
        }
    });

    const auto n_replay = static_cast<std::size_t>(std::ceil(cfg.replay_ratio * static_cast<double>(domain.size())));
    std::vector<TrainingExample> replay_examples;
    if (n_replay > 0 && replay.empty()) {
        result.warnings.push_back({"empty_replay", "replay_ratio > 0 but the replay buffer is empty"});
    } else if (n_replay > 0) {
        std::set<std::string> gold;
        for (const auto* p : train)
            for (const auto& a : p->answers) gold.insert(a);
        for (const auto& item : replay)
            if (gold.count(item.output))
                result.warnings.push_back({"replay_gold_answer", "replay output equals a gold answer: " + item.input});
        std::vector<std::size_t> order(replay.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = Rng::keyed(cfg.seed, "replay|select");
        rng.shuffle(order);
        if (n_replay > replay.size())
            result.warnings.push_back({"replay_repeated", std::to_string(n_replay) + " replay examples from a buffer of " +
                                                              std::to_string(replay.size())});
        char id[32];
        for (std::size_t i = 0; i < n_replay; ++i) {
            const auto& item = replay[order[i % order.size()]];
            TrainingExample ex;
            std::snprintf(id, sizeof id, "replay:%06zu", i);
            ex.example_id = id;
            ex.question = ex.bare_question = item.input;
            ex.answer = item.output;
            ex.origin = Origin::Replay;
            ex.strategy = cfg.strategy;
            ex.mode = "replay";
            replay_examples.push_back(std::move(ex));
        }
    }

    // Seeded placement of replay rows among domain rows; each group keeps its order.
    std::vector<bool> is_replay(domain.size() + replay_examples.size(), false);
    std::fill(is_replay.begin() + static_cast<std::ptrdiff_t>(domain.size()), is_replay.end(), true);
    auto mix = Rng::keyed(cfg.seed, "replay|interleave");
    mix.shuffle(is_replay);
    result.examples.reserve(is_replay.size());
    std::size_t d = 0, r = 0;
    for (bool rep : is_replay)
        result.examples.push_back(rep ? std::move(replay_examples[r++]) : std::move(domain[d++]));
    return result;
}

ReplayResult build_replay(const std::vector<ReplayInput>& inputs, const Gateway& gateway, const Sampling& sampling) {
    ReplayResult out;
    std::vector<ChatRequest> requests;
    requests.reserve(inputs.size());
    for (const auto& in : inputs) requests.push_back({"replay", {{"input", in.input}}, sampling});
    const auto completions = gateway.complete_batch(requests);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto& c = completions[i];
        if (!c.ok()) {
            out.warnings.push_back({"replay_dropped", "input " + std::to_string(i) + ": " + c.error->what()});
            continue;
        }
        if (trim(c.text).empty()) {
            out.warnings.push_back({"replay_dropped", "input " + std::to_string(i) + ": empty completion"});
            continue;
        }
        out.items.push_back({inputs[i].category, inputs[i].input, c.text});
    }
    return out;
}

RenderedExample render(const TrainingExample& example, const TemplateSet& templates) {
    if (example.origin == Origin::Replay) return {example.question, example.answer};

    const bool with_context = !example.context.empty() || example.bucket != Bucket::None;
    std::string tmpl = templates.get(with_context ? "rag_finetune" : "dsf_finetune");

    std::size_t slots = 0;
    for (const auto& name : placeholders(tmpl))
        if (name.rfind("document_", 0) == 0) ++slots;
    if (with_context && slots != example.context.size())
        throw Error(ErrorCode::TemplateArity, "template has " + std::to_string(slots) + " passage slots, example " +
                                                  example.example_id + " has " +
                                                  std::to_string(example.context.size()) + " passages");

    Variables vars;
    for (std::size_t i = 0; i < example.context.size(); ++i)
        vars["document_" + std::to_string(i)] = trim(example.context[i].text);

    const auto slot = tmpl.find("{data_identifier}");
    if (slot != std::string::npos && example.domain_identifier) {
        vars["data_identifier"] = *example.domain_identifier;
        vars["question"] = example.bare_question;
    } else {
        if (slot != std::string::npos) {
            const auto len = tmpl.compare(slot + 17, 1, " ") == 0 ? 18 : 17;
            tmpl.erase(slot, len);
        }
        vars["question"] = example.question;
    }
    return {render_template(tmpl, vars), "<response>" + example.answer + "</response>"};
}

nlohmann::json to_record(const TrainingExample& example, const TemplateSet& templates) {
    const auto r = render(example, templates);
    nlohmann::json passage_ids = nlohmann::json::array();
    for (const auto& p : example.context) passage_ids.push_back(p.id);
    nlohmann::json meta = {
        {"bucket", to_string(example.bucket)},
        {"oracle_present", example.oracle_present},
        {"oracle_position", example.oracle_position ? nlohmann::json(*example.oracle_position) : nlohmann::json()},
        {"origin", to_string(example.origin)},
        {"strategy", to_string(example.strategy)},
        {"source_chunk_id", example.source_chunk_id.empty() ? nlohmann::json() : nlohmann::json(example.source_chunk_id)},
        {"question_id", example.question_id.empty() ? nlohmann::json() : nlohmann::json(example.question_id)},
        {"mode", example.mode},
        {"answer_index", example.answer_index},
        {"passage_ids", passage_ids},
    };
    return {{"example_id", example.example_id}, {"prompt", r.prompt}, {"completion", r.completion}, {"meta", meta}};
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
    nlohmann::json chapters = nlohmann::json::object();
    for (const auto& [k, v] : c.chapter_map) chapters[k] = to_string(v);
    j = {{"strategy", to_string(c.strategy)},
         {"corruption_p", c.corruption_p},
         {"k_passages", c.k_passages},
         {"max_paraphrases", c.max_paraphrases},
         {"T", c.T},
         {"N_c", c.N_c},
         {"domain_identifier", c.domain_identifier ? nlohmann::json(*c.domain_identifier) : nlohmann::json()},
         {"replay_ratio", c.replay_ratio},
         {"assignment_policy", to_string(c.assignment_policy)},
         {"chapter_map", chapters},
         {"seed", c.seed},
         {"retrieval_depth", c.retrieval_depth}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
    c = DatasetConfig{};
    if (auto it = j.find("strategy"); it != j.end()) c.strategy = strategy_from_string(it->get<std::string>());
    c.corruption_p = j.value("corruption_p", c.corruption_p);
    c.k_passages = j.value("k_passages", c.k_passages);
    c.max_paraphrases = j.value("max_paraphrases", c.max_paraphrases);
    c.T = j.value("T", c.T);
    c.N_c = j.value("N_c", c.N_c);
    if (auto it = j.find("domain_identifier"); it != j.end() && !it->is_null())
        c.domain_identifier = it->get<std::string>();
    c.replay_ratio = j.value("replay_ratio", c.replay_ratio);
    if (auto it = j.find("assignment_policy"); it != j.end())
        c.assignment_policy = policy_from_string(it->get<std::string>());
    if (auto it = j.find("chapter_map"); it != j.end())
        for (const auto& [k, v] : it->items()) c.chapter_map[k] = bucket_from_string(v.get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.retrieval_depth = j.value("retrieval_depth", c.retrieval_depth);
}

void to_json(nlohmann::json& j, const ReplayItem& r) {
    j = {{"category", to_string(r.category)}, {"input", r.input}, {"output", r.output}};
}

void from_json(const nlohmann::json& j, ReplayItem& r) {
    r.category = category_from_string(j.value("category", std::string("other")));
    r.input = j.at("input").get<std::string>();
    r.output = j.at("output").get<std::string>();
}

void to_json(nlohmann::json& j, const ReplayInput& r) {
    j = {{"category", to_string(r.category)}, {"input", r.input}};
}

void from_json(const nlohmann::json& j, ReplayInput& r) {
    r.category = category_from_string(j.value("category", std::string("other")));
    r.input = j.at("input").get<std::string>();
}

void to_json(nlohmann::json& j, const Passage& p) {
    j = {{"id", p.id}, {"doc_id", p.doc_id}, {"span", {p.span.begin, p.span.end}}, {"text", p.text}};
}

}  // namespace kforge
