#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kforge/corpus.hpp"
#include "kforge/llm_gateway.hpp"

namespace kforge {

enum class Split { Train, Val, Test };

std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);

struct QAPair {
    std::string id;
    std::string question;
    std::vector<std::string> answers;  // answers[0] is canonical
    std::string source_chunk_id;
    std::optional<Split> split;  // unset until split() runs

    const std::string& canonical() const { return answers.at(0); }
};

struct CoverageReport {
    std::map<std::string, double> per_chunk;
    std::map<std::string, double> per_doc;
    double overall = 0.0;
};

struct GenerateOptions {
    std::size_t calls = 3;  // completions of the generation prompt per chunk
    Sampling sampling;      // sampling.seed is the base; call i uses seed + i
    std::optional<double> early_stop_coverage;  // stop once chunk coverage reaches this
};

struct QAResult {
    std::vector<QAPair> pairs;
    std::vector<Warning> warnings;
};

/// Pairs question/answer spans of one completion by strict alternation.
/// Orphan tags are dropped with a warning.
std::vector<std::pair<std::string, std::string>> pair_questions(std::string_view completion,
                                                                std::vector<Warning>& warnings);

/// Generates QA pairs for one chunk from `options.calls` completions. Exact
/// duplicate questions (after normalization) keep their first occurrence. A call
/// yielding nothing is re-prompted once. Throws GenerationEmpty if no call
/// produced a pair; gateway errors propagate.
QAResult generate_qa(const Gateway& gateway, const Corpus& corpus, const Chunk& chunk,
                     const GenerateOptions& options);

/// generate_qa over every chunk, `jobs` chunks at a time, merged in chunk order.
/// Chunks that yield nothing are skipped with a warning.
QAResult generate_corpus_qa(const Gateway& gateway, const Corpus& corpus, const GenerateOptions& options,
                            std::size_t jobs = 1);

struct MultiplicityResult {
    QAPair pair;
    std::vector<Warning> warnings;
};

/// Extends `pair.answers` with answers parsed from the multiple-answers prompt,
/// deduplicated under normalization and capped at `max_answers` in total. The
/// canonical answer stays first. Gateway failures leave the pair unchanged.
MultiplicityResult add_multiplicity(const Gateway& gateway, const Corpus& corpus, const QAPair& pair,
                                    std::size_t max_answers, const Sampling& sampling = {});

QAResult add_multiplicity_all(const Gateway& gateway, const Corpus& corpus, const std::vector<QAPair>& pairs,
                              std::size_t max_answers, const Sampling& sampling = {}, std::size_t jobs = 1);

/// Fraction of a chunk's unique metric tokens that appear in any question or
/// answer generated from it. Chunks without tokens count as fully covered.
double chunk_coverage(std::string_view chunk_text, const std::vector<const QAPair*>& pairs);

/// Per-chunk coverage; per_doc is the token-weighted mean of its chunks and
/// overall is the mean of per_doc. Throws UnknownChunk.
CoverageReport coverage(const Corpus& corpus, const std::vector<Chunk>& chunks, const std::vector<QAPair>& pairs);

struct FilterResult {
    std::vector<QAPair> kept;
    std::vector<QAPair> removed;
    std::vector<Warning> warnings;
};

/// Judges each test question with the completeness prompt; a question is
/// removed only on an explicit "Incomplete" verdict.
FilterResult filter_test(const Gateway& gateway, const std::vector<QAPair>& pairs, const Sampling& sampling = {});

/// Pairs whose canonical answer has at most `max_words` whitespace tokens.
std::vector<QAPair> extract_factoid(const std::vector<QAPair>& pairs, std::size_t max_words = 8);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

/// Seeded shuffle, then contiguous train/val/test assignment. Input order is kept.
std::vector<QAPair> assign_splits(std::vector<QAPair> pairs, const SplitRatios& ratios, std::uint64_t seed);

void to_json(nlohmann::json& j, const QAPair& p);
void from_json(const nlohmann::json& j, QAPair& p);
void to_json(nlohmann::json& j, const CoverageReport& r);

}  // namespace kforge
