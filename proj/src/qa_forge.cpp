#include "kforge/qa_forge.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "kforge/util.hpp"

namespace kforge {
namespace {

std::string pair_id(const std::string& chunk_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "-q%03zu", index);
    return chunk_id + buf;
}

Sampling with_seed(Sampling s, std::uint64_t seed) {
    s.seed = seed;
    return s;
}

std::string lower_trimmed(std::string_view s) {
    auto t = trim(s);
    const auto b = t.find_first_not_of('*');
    const auto e = t.find_last_not_of("*.");
    if (b == std::string::npos || e == std::string::npos || e < b) return {};
    return to_lower_ascii(std::string_view(t).substr(b, e - b + 1));
}

}  // namespace

std::string_view to_string(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw Error(ErrorCode::InvalidArgument, "unknown split: " + std::string(s));
}

std::vector<std::pair<std::string, std::string>> pair_questions(std::string_view completion,
                                                                std::vector<Warning>& warnings) {
    auto parsed = parse_tagged(completion, std::vector<std::string>{"question", "answer"});
    warnings.insert(warnings.end(), parsed.warnings.begin(), parsed.warnings.end());

    std::vector<std::pair<std::string, std::string>> pairs;
    std::optional<std::string> pending;
    for (auto& span : parsed.spans) {
        if (span.tag == "question") {
            if (pending) warnings.push_back({"orphan_question", *pending});
            pending = std::move(span.body);
        } else if (pending) {
            if (pending->empty() || span.body.empty())
                warnings.push_back({"empty_pair", *pending});
            else
                pairs.emplace_back(std::move(*pending), std::move(span.body));
            pending.reset();
        } else {
            warnings.push_back({"orphan_answer", span.body});
        }
    }
    if (pending) warnings.push_back({"orphan_question", *pending});
    return pairs;
}

QAResult generate_qa(const Gateway& gateway, const Corpus& corpus, const Chunk& chunk,
                     const GenerateOptions& options) {
    if (options.calls == 0) throw Error(ErrorCode::InvalidArgument, "generation needs at least one call");

    const std::string text(corpus.text_of(chunk));
    const auto base_seed = options.sampling.seed.value_or(0);
    QAResult result;
    std::unordered_set<std::string> seen;

    for (std::size_t call = 0; call < options.calls; ++call) {
        ChatRequest req{std::string(template_id::kQaGeneration), {{"document", text}},
                        with_seed(options.sampling, base_seed + call)};
        auto found = pair_questions(gateway.complete(req), result.warnings);
        if (found.empty()) {
            result.warnings.push_back({"reprompt", chunk.id + " call " + std::to_string(call)});
            req.sampling.seed = base_seed + options.calls + call;
            found = pair_questions(gateway.complete(req), result.warnings);
            if (found.empty()) result.warnings.push_back({"empty_completion", chunk.id});
        }
        for (auto& [q, a] : found) {
            auto key = normalize(q);
            if (key.empty() || !seen.insert(std::move(key)).second) continue;
            QAPair pair;
            pair.question = std::move(q);
            pair.answers.push_back(std::move(a));
            pair.source_chunk_id = chunk.id;
            result.pairs.push_back(std::move(pair));
        }
        if (options.early_stop_coverage && !result.pairs.empty()) {
            std::vector<const QAPair*> refs;
            for (const auto& p : result.pairs) refs.push_back(&p);
            if (chunk_coverage(text, refs) >= *options.early_stop_coverage) break;
        }
    }
    if (result.pairs.empty())
        throw Error(ErrorCode::GenerationEmpty, "no QA pairs generated for " + chunk.id);
    for (std::size_t i = 0; i < result.pairs.size(); ++i) result.pairs[i].id = pair_id(chunk.id, i);
    return result;
}

QAResult generate_corpus_qa(const Gateway& gateway, const Corpus& corpus, const GenerateOptions& options,
                            std::size_t jobs) {
    const auto& chunks = corpus.chunks();
    std::vector<QAResult> per_chunk(chunks.size());
    parallel_for(chunks.size(), jobs, [&](std::size_t i) {
        try {
            per_chunk[i] = generate_qa(gateway, corpus, chunks[i], options);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::GenerationEmpty) throw;
            per_chunk[i].warnings.push_back({"generation_empty", chunks[i].id});
        }
    });
    QAResult merged;
    for (auto& r : per_chunk) {
        merged.pairs.insert(merged.pairs.end(), std::make_move_iterator(r.pairs.begin()),
                            std::make_move_iterator(r.pairs.end()));
        merged.warnings.insert(merged.warnings.end(), r.warnings.begin(), r.warnings.end());
    }
    return merged;
}

MultiplicityResult add_multiplicity(const Gateway& gateway, const Corpus& corpus, const QAPair& pair,
                                    std::size_t max_answers, const Sampling& sampling) {
    if (max_answers == 0) throw Error(ErrorCode::InvalidArgument, "max_answers must be >= 1");
    MultiplicityResult result{pair, {}};
    if (pair.answers.empty()) throw Error(ErrorCode::InvalidArgument, pair.id + " has no answers");

    // Existing answers go through the same dedupe and cap.
    std::vector<std::string> answers;
    std::unordered_set<std::string> seen;
    auto offer = [&](std::string answer) {
        if (answers.size() >= max_answers) return;
        auto key = normalize(answer);
        if (key.empty() && !answers.empty()) return;
        if (!seen.insert(std::move(key)).second) return;
        answers.push_back(std::move(answer));
    };
    for (const auto& a : pair.answers) offer(a);

    const auto& chunk = corpus.chunk(pair.source_chunk_id);
    ChatRequest req{std::string(template_id::kMultipleAnswers),
                    {{"document", std::string(corpus.text_of(chunk))}, {"question", pair.question}},
                    sampling};
    try {
        auto parsed = parse_tagged(gateway.complete(req), "answer");
        result.warnings.insert(result.warnings.end(), parsed.warnings.begin(), parsed.warnings.end());
        if (parsed.spans.empty()) {
            result.warnings.push_back({"reprompt", pair.id});
            if (req.sampling.seed) ++*req.sampling.seed;
            parsed = parse_tagged(gateway.complete(req), "answer");
            result.warnings.insert(result.warnings.end(), parsed.warnings.begin(), parsed.warnings.end());
            if (parsed.spans.empty()) result.warnings.push_back({"no_answers_parsed", pair.id});
        }
        for (auto& span : parsed.spans) offer(std::move(span.body));
    } catch (const Error& e) {
        result.warnings.push_back({"multiplicity_failed", pair.id + ": " + e.what()});
        return result;
    }
    result.pair.answers = std::move(answers);
    return result;
}

QAResult add_multiplicity_all(const Gateway& gateway, const Corpus& corpus, const std::vector<QAPair>& pairs,
                              std::size_t max_answers, const Sampling& sampling, std::size_t jobs) {
    std::vector<MultiplicityResult> out(pairs.size());
    parallel_for(pairs.size(), jobs,
                 [&](std::size_t i) { out[i] = add_multiplicity(gateway, corpus, pairs[i], max_answers, sampling); });
    QAResult merged;
    for (auto& r : out) {
        merged.pairs.push_back(std::move(r.pair));
        merged.warnings.insert(merged.warnings.end(), r.warnings.begin(), r.warnings.end());
    }
    return merged;
}

double chunk_coverage(std::string_view chunk_text, const std::vector<const QAPair*>& pairs) {
    const auto chunk_tokens = tokenize(chunk_text);
    const std::unordered_set<std::string> vocab(chunk_tokens.begin(), chunk_tokens.end());
    if (vocab.empty()) return 1.0;

    std::unordered_set<std::string> covered;
    auto absorb = [&](std::string_view text) {
        for (auto& t : tokenize(text))
            if (vocab.count(t)) covered.insert(std::move(t));
    };
    for (const auto* p : pairs) {
        absorb(p->question);
        for (const auto& a : p->answers) absorb(a);
    }
    return static_cast<double>(covered.size()) / static_cast<double>(vocab.size());
}

CoverageReport coverage(const Corpus& corpus, const std::vector<Chunk>& chunks, const std::vector<QAPair>& pairs) {
    std::unordered_map<std::string, std::vector<const QAPair*>> by_chunk;
    for (const auto& c : chunks) by_chunk[c.id];
    for (const auto& p : pairs) {
        auto it = by_chunk.find(p.source_chunk_id);
        if (it == by_chunk.end())
            throw Error(ErrorCode::UnknownChunk, p.id + " references unknown chunk " + p.source_chunk_id);
        it->second.push_back(&p);
    }

    CoverageReport report;
    struct Acc {
        double weighted = 0.0;
        double weight = 0.0;
        double plain = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, Acc> docs;
    for (const auto& c : chunks) {
        const double cov = chunk_coverage(corpus.text_of(c), by_chunk[c.id]);
        report.per_chunk[c.id] = cov;
        auto& acc = docs[c.doc_id];
        acc.weighted += cov * static_cast<double>(c.token_count);
        acc.weight += static_cast<double>(c.token_count);
        acc.plain += cov;
        ++acc.count;
    }
    double total = 0.0;
    for (const auto& [doc, acc] : docs) {
        const double v = acc.weight > 0.0 ? acc.weighted / acc.weight : acc.plain / static_cast<double>(acc.count);
        report.per_doc[doc] = v;
        total += v;
    }
    report.overall = docs.empty() ? 0.0 : total / static_cast<double>(docs.size());
    return report;
}

FilterResult filter_test(const Gateway& gateway, const std::vector<QAPair>& pairs, const Sampling& sampling) {
    for (const auto& p : pairs)
        if (p.split != Split::Test)
            throw Error(ErrorCode::InvalidArgument, p.id + " is not in the test split");

    std::vector<ChatRequest> requests;
    requests.reserve(pairs.size());
    for (const auto& p : pairs)
        requests.push_back({std::string(template_id::kTestFilter), {{"question", p.question}}, sampling});
    const auto completions = gateway.complete_batch(requests);

    FilterResult result;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& c = completions[i];
        if (!c.ok()) {
            result.warnings.push_back({"filter_error", pairs[i].id + ": " + c.error->what()});
            result.kept.push_back(pairs[i]);
            continue;
        }
        std::string verdict;
        try {
            verdict = lower_trimmed(parse_labeled_line(c.text, "Scoring"));
        } catch (const Error&) {
            result.warnings.push_back({"verdict_unparseable", pairs[i].id});
            result.kept.push_back(pairs[i]);
            continue;
        }
        if (verdict == "incomplete") {
            result.removed.push_back(pairs[i]);
        } else {
            if (verdict != "complete") result.warnings.push_back({"verdict_unrecognized", pairs[i].id + ": " + verdict});
            result.kept.push_back(pairs[i]);
        }
    }
    return result;
}

std::vector<QAPair> extract_factoid(const std::vector<QAPair>& pairs, std::size_t max_words) {
    std::vector<QAPair> out;
    for (const auto& p : pairs)
        if (!p.answers.empty() && count_tokens(p.canonical(), {TokenizerMode::Raw}) <= max_words) out.push_back(p);
    return out;
}

std::vector<QAPair> assign_splits(std::vector<QAPair> pairs, const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw Error(ErrorCode::InvalidArgument, "split ratios must be non-negative and sum to 1");

    const std::size_t n = pairs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios.train * n)));
    const auto n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * n)));
    for (std::size_t k = 0; k < n; ++k) {
        const Split s = k < n_train ? Split::Train : k < n_train + n_val ? Split::Val : Split::Test;
        pairs[order[k]].split = s;
    }
    return pairs;
}

void to_json(nlohmann::json& j, const QAPair& p) {
    j = {{"id", p.id},
         {"question", p.question},
         {"answers", p.answers},
         {"source_chunk_id", p.source_chunk_id},
         {"split", p.split ? nlohmann::json(to_string(*p.split)) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, QAPair& p) {
    j.at("id").get_to(p.id);
    j.at("question").get_to(p.question);
    j.at("answers").get_to(p.answers);
    if (p.answers.empty()) throw Error(ErrorCode::FormatError, p.id + " has no answers");
    j.at("source_chunk_id").get_to(p.source_chunk_id);
    const auto it = j.find("split");
    if (it == j.end() || it->is_null())
        p.split.reset();
    else
        p.split = split_from_string(it->get<std::string>());
}

void to_json(nlohmann::json& j, const CoverageReport& r) {
    j = {{"per_chunk", r.per_chunk}, {"per_doc", r.per_doc}, {"overall", r.overall}};
}

}  // namespace kforge
