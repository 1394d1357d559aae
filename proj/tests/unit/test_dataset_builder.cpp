#include "helpers.hpp"

#include <array>

#include <cmath>
#include <map>
#include <set>

#include "kforge/dataset_builder.hpp"
#include "kforge/jsonl.hpp"

using namespace kforge;

namespace {

struct Fixture {
    Corpus corpus;
    Index index;
    std::vector<QAPair> pairs;  // all train
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture f;
        f.corpus = kt::fixture_corpus(200);
        f.index = Index::build(f.corpus.documents(), 40);
        auto gw = kt::mock_gateway();
        GenerateOptions opts;
        opts.sampling.seed = 1;
        auto qa = generate_corpus_qa(gw, f.corpus, opts).pairs;
        qa = add_multiplicity_all(gw, f.corpus, qa, 5).pairs;
        for (auto& p : qa) p.split = Split::Train;
        f.pairs = qa;
        return f;
    }();
    return f;
}

std::size_t gold_overlaps(const std::vector<Passage>& ctx, const Chunk& gold) {
    std::size_t n = 0;
    for (const auto& p : ctx) n += overlaps_gold(p, gold);
    return n;
}

DatasetConfig config(Strategy s, double p = 0.4) {
    DatasetConfig c;
    c.strategy = s;
    c.corruption_p = p;
    c.replay_ratio = 0.0;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("enum names round trip") {
    for (auto s : {Strategy::DSF, Strategy::RAFT, Strategy::CA_RAFT, Strategy::PA_RAG})
        CHECK(strategy_from_string(to_string(s)) == s);
    for (auto p : {AssignmentPolicy::PerQA, AssignmentPolicy::PerQuestion, AssignmentPolicy::PerChapter})
        CHECK(policy_from_string(to_string(p)) == p);
    CHECK(category_from_string("writing") == ReplayCategory::Writing);
    CHECK(kt::error_code_of([] { strategy_from_string("raft2"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("config validation and json") {
    auto c = config(Strategy::PA_RAG);
    c.corruption_p = 1.5;
    CHECK(kt::error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c = config(Strategy::PA_RAG);
    c.k_passages = 0;
    CHECK(kt::error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
    c = config(Strategy::PA_RAG);
    c.assignment_policy = AssignmentPolicy::PerChapter;
    CHECK(kt::error_code_of([&] { c.validate(); }) == ErrorCode::MissingChapterMap);
    c.chapter_map["ch1"] = Bucket::Failure;
    c.domain_identifier = "id";
    c.validate();
    const auto back = nlohmann::json(c).get<DatasetConfig>();
    CHECK(nlohmann::json(back) == nlohmann::json(c));
    const auto defaults = nlohmann::json::object().get<DatasetConfig>();
    CHECK(defaults.k_passages == 5);
    CHECK(defaults.max_paraphrases == 5);
    CHECK(defaults.T == 8000);
    CHECK(defaults.replay_ratio == 0.1);
    CHECK(defaults.assignment_policy == AssignmentPolicy::PerQA);
}

TEST_CASE("bucket assignment extremes and marginal") {
    auto c = config(Strategy::PA_RAG, 0.0);
    for (int i = 0; i < 200; ++i) CHECK(assign_bucket({"q" + std::to_string(i), 0, "", ""}, c) == Bucket::Success);
    c.corruption_p = 1.0;
    for (int i = 0; i < 200; ++i) CHECK(assign_bucket({"q" + std::to_string(i), 0, "", ""}, c) == Bucket::Failure);
    c.corruption_p = 0.4;
    int failures = 0;
    for (int i = 0; i < 10000; ++i) failures += assign_bucket({"q" + std::to_string(i), 0, "", ""}, c) == Bucket::Failure;
    CHECK(std::abs(failures / 10000.0 - 0.4) <= 0.015);
    // order independence
    CHECK(assign_bucket({"q17", 3, "", ""}, c) == assign_bucket({"q17", 3, "", ""}, c));
}

TEST_CASE("per_question shares a bucket across answers; per_qa does not") {
    auto c = config(Strategy::PA_RAG, 0.5);
    c.assignment_policy = AssignmentPolicy::PerQuestion;
    for (int q = 0; q < 100; ++q) {
        const auto first = assign_bucket({"q" + std::to_string(q), 0, "", ""}, c);
        for (std::size_t a = 1; a < 5; ++a) CHECK(assign_bucket({"q" + std::to_string(q), a, "", ""}, c) == first);
    }
    c.assignment_policy = AssignmentPolicy::PerQA;
    int mixed = 0;
    for (int q = 0; q < 100; ++q) {
        std::set<Bucket> seen;
        for (std::size_t a = 0; a < 5; ++a) seen.insert(assign_bucket({"q" + std::to_string(q), a, "", ""}, c));
        mixed += seen.size() == 2;
    }
    CHECK(mixed > 80);  // expected 1 - 2 * 0.5^5 = 0.9375
}

TEST_CASE("per_chapter lookup by document id or title") {
    auto c = config(Strategy::PA_RAG);
    c.assignment_policy = AssignmentPolicy::PerChapter;
    c.chapter_map = {{"doc-a", Bucket::Failure}, {"Chapter Two", Bucket::Success}};
    CHECK(assign_bucket({"q", 0, "doc-a", "whatever"}, c) == Bucket::Failure);
    CHECK(assign_bucket({"q", 0, "doc-b", "Chapter Two"}, c) == Bucket::Success);
    CHECK(kt::error_code_of([&] { assign_bucket({"q", 0, "doc-c", "Other"}, c); }) == ErrorCode::MissingChapterMap);
}

TEST_CASE("context construction contract") {
    const auto& f = fixture();
    for (const auto& p : f.pairs) {
        const auto& gold = f.corpus.chunk(p.source_chunk_id);
        auto rng = Rng::keyed(1, p.id);
        const auto s = build_context(f.index, f.corpus, gold, p.question, Bucket::Success, 5, rng);
        REQUIRE(s.passages.size() == 5);
        CHECK(gold_overlaps(s.passages, gold) == 1);
        REQUIRE(s.oracle_position.has_value());
        CHECK(*s.oracle_position >= 1);
        CHECK(*s.oracle_position <= 5);
        CHECK(overlaps_gold(s.passages[*s.oracle_position - 1], gold));
        std::set<std::string> ids;
        for (const auto& x : s.passages) ids.insert(x.id);
        CHECK(ids.size() == 5);

        const auto fl = build_context(f.index, f.corpus, gold, p.question, Bucket::Failure, 5, rng);
        CHECK(fl.passages.size() == 5);
        CHECK(gold_overlaps(fl.passages, gold) == 0);
        CHECK_FALSE(fl.oracle_position.has_value());

        CHECK(build_context(f.index, f.corpus, gold, p.question, Bucket::None, 5, rng).passages.empty());
    }
}

TEST_CASE("oracle is the top-ranked overlapping retrieved passage") {
    const auto& f = fixture();
    const auto& p = f.pairs.front();
    const auto& gold = f.corpus.chunk(p.source_chunk_id);
    std::string expected;
    for (const auto& r : f.index.search(p.question, 50))
        if (overlaps_gold(f.index.at(r.passage_id), gold)) {
            expected = r.passage_id;
            break;
        }
    REQUIRE_FALSE(expected.empty());
    auto rng = Rng(3);
    const auto s = build_context(f.index, f.corpus, gold, p.question, Bucket::Success, 5, rng);
    CHECK(s.passages[*s.oracle_position - 1].id == expected);
}

TEST_CASE("oracle falls back to a cut of the gold chunk when the document is not indexed") {
    const auto& f = fixture();
    const auto extra = kt::make_doc("Unindexed", "Completely separate material about tape libraries and robots.");
    const auto corpus = Corpus::build({extra}, 8000);
    const auto& gold = corpus.chunks()[0];
    Rng rng(2);
    const auto s = build_context(f.index, corpus, gold, "tape libraries", Bucket::Success, 5, rng);
    REQUIRE(s.passages.size() == 5);
    const auto& oracle = s.passages[*s.oracle_position - 1];
    CHECK(oracle.id == gold.id + "#oracle");
    CHECK(oracle.text == corpus.text_of(gold));
    CHECK(gold_overlaps(s.passages, gold) == 1);
}

TEST_CASE("distractor fill and shortage") {
    // Two tiny documents: retrieval cannot supply four distractors.
    const auto a = kt::make_doc("A", "alpha alpha alpha");
    const auto b = kt::make_doc("B", "beta gamma delta");
    const auto corpus = Corpus::build({a, b}, 8000);
    const auto index = Index::build({a, b}, 2);
    const auto& gold = corpus.chunks()[0];
    Rng rng(1);
    const auto s = build_context(index, corpus, gold, "alpha", Bucket::Success, 5, rng);
    CHECK(s.passages.size() == 5);
    CHECK(gold_overlaps(s.passages, gold) == 1);

    const auto lone = Index::build({a}, 512);
    const auto lone_corpus = Corpus::build({a}, 8000);
    CHECK(kt::error_code_of([&] {
              build_context(lone, lone_corpus, lone_corpus.chunks()[0], "alpha", Bucket::Failure, 5, rng);
          }) == ErrorCode::InsufficientDistractors);
    CHECK(kt::error_code_of([&] { build_context(Index{}, corpus, gold, "alpha", Bucket::Failure, 5, rng); }) ==
          ErrorCode::IndexNotBuilt);
}

TEST_CASE("oracle position is uniform over slots") {
    const auto& f = fixture();
    std::array<int, 5> counts{};
    const int n = 5000;
    for (int i = 0; i < n; ++i) {
        const auto& p = f.pairs[static_cast<std::size_t>(i) % f.pairs.size()];
        auto rng = Rng::keyed(9, "ctx" + std::to_string(i));
        const auto s = build_context(f.index, f.corpus, f.corpus.chunk(p.source_chunk_id), p.question, Bucket::Success,
                                     5, rng);
        ++counts[*s.oracle_position - 1];
    }
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
    CHECK(chi2 < 13.277);  // df=4, alpha=0.01
}

TEST_CASE("strategy sizes and invariants") {
    const auto& f = fixture();
    const auto n = f.pairs.size();
    REQUIRE(n > 10);

    SUBCASE("DSF") {
        const auto r = build_dataset(f.pairs, config(Strategy::DSF), f.index, f.corpus, {});
        CHECK(r.examples.size() == n);
        for (const auto& e : r.examples) {
            CHECK(e.context.empty());
            CHECK(e.bucket == Bucket::None);
            CHECK_FALSE(e.oracle_present);
            CHECK(e.answer == f.pairs[0].answers[0]);
            break;
        }
        // DSF needs no index
        CHECK(build_dataset(f.pairs, config(Strategy::DSF), Index{}, f.corpus, {}).examples.size() == n);
    }
    SUBCASE("RAFT uses the canonical answer once per question") {
        const auto r = build_dataset(f.pairs, config(Strategy::RAFT), f.index, f.corpus, {});
        CHECK(r.examples.size() == n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(r.examples[i].answer == f.pairs[i].canonical());
            CHECK(r.examples[i].context.size() == 5);
        }
    }
    SUBCASE("CA_RAFT is three times the questions, once per mode") {
        const auto r = build_dataset(f.pairs, config(Strategy::CA_RAFT), f.index, f.corpus, {});
        CHECK(r.examples.size() == 3 * n);
        std::map<std::string, std::map<std::string, int>> seen;
        for (const auto& e : r.examples) ++seen[e.question_id][e.mode];
        CHECK(seen.size() == n);
        for (const auto& [q, modes] : seen) {
            CHECK(modes.at("raft0") == 1);
            CHECK(modes.at("raft1") == 1);
            CHECK(modes.at("raftp") == 1);
        }
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(r.examples[i].bucket == Bucket::Success);
            CHECK(r.examples[n + i].bucket == Bucket::Failure);
        }
    }
    SUBCASE("PA_RAG gives one example per answer") {
        const auto r = build_dataset(f.pairs, config(Strategy::PA_RAG, 0.5), f.index, f.corpus, {});
        std::size_t answers = 0;
        for (const auto& p : f.pairs) answers += p.answers.size();
        CHECK(r.examples.size() == answers);
        std::map<std::string, std::set<Bucket>> by_q;
        for (const auto& e : r.examples) {
            by_q[e.question_id].insert(e.bucket);
            CHECK(e.oracle_present == (e.bucket == Bucket::Success));
            CHECK(e.oracle_position.has_value() == e.oracle_present);
            CHECK(e.context.size() == 5);
            const auto& gold = f.corpus.chunk(e.source_chunk_id);
            CHECK(gold_overlaps(e.context, gold) == (e.oracle_present ? 1u : 0u));
        }
        CHECK(std::any_of(by_q.begin(), by_q.end(), [](const auto& kv) { return kv.second.size() == 2; }));
    }
    SUBCASE("max_paraphrases limits answers used") {
        auto c = config(Strategy::PA_RAG);
        c.max_paraphrases = 2;
        const auto r = build_dataset(f.pairs, c, f.index, f.corpus, {});
        for (const auto& e : r.examples) CHECK(e.answer_index < 2);
    }
}

TEST_CASE("identifier prefix and replay mixing") {
    const auto& f = fixture();
    auto c = config(Strategy::PA_RAG);
    c.domain_identifier = "This query is with reference to IBM Redbooks";
    c.replay_ratio = 0.25;
    const std::vector<ReplayItem> replay{{ReplayCategory::Writing, "Write a haiku about rivers", "Water runs..."},
                                         {ReplayCategory::Math, "What is 2+2?", "4"}};
    const auto r = build_dataset(f.pairs, c, f.index, f.corpus, replay);
    std::size_t domain = 0, rep = 0;
    for (const auto& e : r.examples) {
        if (e.origin == Origin::Domain) {
            ++domain;
            CHECK(e.question.rfind(*c.domain_identifier + " ", 0) == 0);
        } else {
            ++rep;
            CHECK(e.question.find("IBM Redbooks") == std::string::npos);
            CHECK(e.context.empty());
            CHECK(e.bucket == Bucket::None);
        }
    }
    CHECK(rep == static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(domain))));
    // replay rows are spread, not appended
    const auto first = std::find_if(r.examples.begin(), r.examples.end(),
                                    [](const TrainingExample& e) { return e.origin == Origin::Replay; });
    CHECK(static_cast<std::size_t>(first - r.examples.begin()) < domain);

    c.replay_ratio = 0.1;
    const auto none = build_dataset(f.pairs, c, f.index, f.corpus, {});
    CHECK(none.warnings.back().code == "empty_replay");
}

TEST_CASE("dataset construction is deterministic and independent of jobs") {
    const auto& f = fixture();
    auto c = config(Strategy::CA_RAFT);
    c.replay_ratio = 0.1;
    const std::vector<ReplayItem> replay{{ReplayCategory::Code, "in", "out"}};
    const auto tmpl = TemplateSet::builtin();
    auto dump = [&](const DatasetResult& r) {
        std::string s;
        for (const auto& e : r.examples) s += to_record(e, tmpl).dump() + "\n";
        return s;
    };
    const auto a = dump(build_dataset(f.pairs, c, f.index, f.corpus, replay, 1));
    CHECK(a == dump(build_dataset(f.pairs, c, f.index, f.corpus, replay, 8)));
    c.seed = 6;
    CHECK(a != dump(build_dataset(f.pairs, c, f.index, f.corpus, replay, 1)));
}

TEST_CASE("empty train split") {
    const auto& f = fixture();
    auto pairs = f.pairs;
    for (auto& p : pairs) p.split = Split::Test;
    CHECK(kt::error_code_of([&] { build_dataset(pairs, config(Strategy::RAFT), f.index, f.corpus, {}); }) ==
          ErrorCode::EmptyTrainSplit);
    CHECK(kt::error_code_of([&] { build_dataset({}, config(Strategy::RAFT), f.index, f.corpus, {}); }) ==
          ErrorCode::EmptyTrainSplit);
}

TEST_CASE("rendering") {
    const auto& f = fixture();
    const auto tmpl = TemplateSet::builtin();
    auto c = config(Strategy::RAFT, 0.0);
    c.domain_identifier = "This query is with reference to IBM Redbooks";
    const auto raft = build_dataset(f.pairs, c, f.index, f.corpus, {});
    const auto& ex = raft.examples.front();
    const auto r = render(ex, tmpl);
    std::size_t last = 0;
    for (int i = 0; i < 5; ++i) {
        const auto tag = "<passage_" + std::to_string(i) + ">\n" + trim(ex.context[i].text) + "\n</passage_" +
                         std::to_string(i) + ">";
        const auto at = r.prompt.find(tag);
        REQUIRE(at != std::string::npos);
        CHECK(at >= last);
        last = at;
    }
    CHECK(r.prompt.find("User: This query is with reference to IBM Redbooks " + ex.bare_question + "\n") !=
          std::string::npos);
    CHECK(r.completion == "<response>" + ex.answer + "</response>");
    CHECK(render(ex, tmpl).prompt == r.prompt);
    CHECK(placeholders(r.prompt).empty());

    auto plain = ex;
    plain.domain_identifier.reset();
    plain.question = plain.bare_question;
    CHECK(render(plain, tmpl).prompt.find("User: " + ex.bare_question + "\n") != std::string::npos);

    auto short_ctx = ex;
    short_ctx.context.pop_back();
    CHECK(kt::error_code_of([&] { render(short_ctx, tmpl); }) == ErrorCode::TemplateArity);

    const auto dsf = build_dataset(f.pairs, config(Strategy::DSF), f.index, f.corpus, {});
    const auto d = render(dsf.examples.front(), tmpl);
    CHECK(d.prompt.find("<passage") == std::string::npos);
    CHECK(d.prompt == render_template(tmpl.get("dsf_finetune"), {{"question", dsf.examples.front().question}}));

    TrainingExample replay;
    replay.origin = Origin::Replay;
    replay.question = "Write a haiku";
    replay.answer = "Rivers";
    const auto rr = render(replay, tmpl);
    CHECK(rr.prompt == "Write a haiku");
    CHECK(rr.completion == "Rivers");

    const auto rec = to_record(ex, tmpl);
    CHECK(rec["meta"]["bucket"] == "success");
    CHECK(rec["meta"]["oracle_present"] == true);
    CHECK(rec["meta"]["origin"] == "domain");
    CHECK(rec["meta"]["strategy"] == "raft");
    CHECK(rec["meta"]["source_chunk_id"] == ex.source_chunk_id);
    CHECK(rec["meta"]["oracle_position"] == *ex.oracle_position);
}

TEST_CASE("replay buffer") {
    auto gw = kt::mock_gateway();
    const std::vector<ReplayInput> inputs{{ReplayCategory::Writing, "Write a haiku about rivers"},
                                          {ReplayCategory::Math, "What is 17 * 3?"}};
    const auto r = build_replay(inputs, gw);
    REQUIRE(r.items.size() == 2);
    CHECK(r.items[0].category == ReplayCategory::Writing);
    CHECK(r.items[0].output == r.items[0].input);
    const auto back = from_jsonl<ReplayItem>(parse_jsonl(to_jsonl(r.items)));
    CHECK(back[1].output == "What is 17 * 3?");
    CHECK(back[1].category == ReplayCategory::Math);

    CHECK(build_replay({}, gw).items.empty());

    auto flaky = kt::gateway_for(kt::scripted([](const RenderedRequest& req, int) -> std::string {
        if (req.variables.at("input") == "bad") throw Error(ErrorCode::ProtocolStatus, "500");
        return "ok";
    }));
    const auto fr = build_replay({{ReplayCategory::Other, "bad"}, {ReplayCategory::Other, "good"}}, flaky);
    REQUIRE(fr.items.size() == 1);
    CHECK(fr.items[0].input == "good");
    CHECK(fr.warnings.size() == 1);
}
