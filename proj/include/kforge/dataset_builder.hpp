#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kforge/corpus.hpp"
#include "kforge/llm_gateway.hpp"
#include "kforge/qa_forge.hpp"
#include "kforge/retriever.hpp"
#include "kforge/util.hpp"

namespace kforge {

enum class Strategy { DSF, RAFT, CA_RAFT, PA_RAG };
enum class AssignmentPolicy { PerQA, PerQuestion, PerChapter };
enum class Bucket { Success, Failure, None };
enum class Origin { Domain, Replay };
enum class ReplayCategory { Code, Math, Reasoning, Extraction, Safety, Writing, Other };

std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(AssignmentPolicy p) noexcept;
std::string_view to_string(Bucket b) noexcept;
std::string_view to_string(Origin o) noexcept;
std::string_view to_string(ReplayCategory c) noexcept;
Strategy strategy_from_string(std::string_view s);
AssignmentPolicy policy_from_string(std::string_view s);
Bucket bucket_from_string(std::string_view s);
ReplayCategory category_from_string(std::string_view s);

/// Corruption probabilities swept when tuning p.
inline constexpr std::array<double, 6> kCorruptionGrid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

/// "dataset_p0.4.jsonl" style file name for one grid point.
std::string grid_file_name(double corruption_p);

struct DatasetConfig {
    Strategy strategy = Strategy::PA_RAG;
    double corruption_p = 0.4;
    std::size_t k_passages = 5;
    std::size_t max_paraphrases = 5;
    std::size_t T = 8000;
    std::size_t N_c = 3;
    std::optional<std::string> domain_identifier;
    double replay_ratio = 0.1;
    AssignmentPolicy assignment_policy = AssignmentPolicy::PerQA;
    // Chapter (document id or title) -> bucket, for per_chapter.
    std::map<std::string, Bucket> chapter_map;
    std::uint64_t seed = 0;
    std::size_t retrieval_depth = 50;  // candidates searched per question for oracle/distractors

    /// Throws InvalidArgument, or MissingChapterMap for per_chapter without a map.
    void validate() const;
};

struct TrainingExample {
    std::string example_id;
    std::string question_id;
    std::string question;       // prefixed with the domain identifier when configured
    std::string bare_question;  // without the prefix
    std::optional<std::string> domain_identifier;
    std::vector<Passage> context;
    bool oracle_present = false;
    std::optional<std::size_t> oracle_position;  // 1-based slot of the oracle
    std::string answer;
    std::size_t answer_index = 0;
    Bucket bucket = Bucket::None;
    Origin origin = Origin::Domain;
    Strategy strategy = Strategy::PA_RAG;
    std::string mode;  // dsf, raft, raft0, raft1, raftp, pa_rag, replay
    std::string source_chunk_id;
};

struct ReplayItem {
    ReplayCategory category = ReplayCategory::Other;
    std::string input;
    std::string output;
};

struct ReplayInput {
    ReplayCategory category = ReplayCategory::Other;
    std::string input;
};

struct BucketKey {
    std::string question_id;
    std::size_t answer_index = 0;
    std::string chapter;        // document id of the gold chunk
    std::string chapter_title;  // alternative lookup key
};

/// Draws the bucket for one (question, answer) under cfg.assignment_policy.
/// Each draw comes from its own stream keyed by (cfg.seed, question, answer),
/// so the result does not depend on call order. Throws MissingChapterMap.
Bucket assign_bucket(const BucketKey& key, const DatasetConfig& cfg);

/// Same draw with an explicit policy and probability.
Bucket assign_bucket(const BucketKey& key, AssignmentPolicy policy, double corruption_p,
                     const DatasetConfig& cfg);

struct ContextResult {
    std::vector<Passage> passages;
    std::optional<std::size_t> oracle_position;  // 1-based
};

/// True when `p` lies in gold's document and its span intersects gold's span.
bool overlaps_gold(const Passage& p, const Chunk& gold);

/// Builds k passages for one question. Success: one oracle passage at a
/// uniformly random slot plus k-1 distractors; failure: k distractors. The
/// oracle is the top-ranked retrieved passage intersecting the gold chunk, else
/// the indexed passage with the largest intersection, else a passage cut from
/// the chunk. Distractors are top-ranked non-overlapping retrieved passages,
/// then uniformly random non-overlapping passages.
/// Throws IndexNotBuilt, InsufficientDistractors.
ContextResult build_context(const Index& index, const Corpus& corpus, const Chunk& gold, std::string_view question,
                            Bucket bucket, std::size_t k, Rng& rng, std::size_t retrieval_depth = 50);

struct DatasetResult {
    std::vector<TrainingExample> examples;
    std::vector<Warning> warnings;
};

/// Assembles training examples from train-split pairs. Pairs of other splits
/// are ignored. Throws EmptyTrainSplit, UnknownChunk and context errors.
DatasetResult build_dataset(const std::vector<QAPair>& pairs, const DatasetConfig& cfg, const Index& index,
                            const Corpus& corpus, const std::vector<ReplayItem>& replay, std::size_t jobs = 1);

struct ReplayResult {
    std::vector<ReplayItem> items;
    std::vector<Warning> warnings;
};

/// Runs each input through the target model. Failed completions are dropped
/// with a warning.
ReplayResult build_replay(const std::vector<ReplayInput>& inputs, const Gateway& gateway,
                          const Sampling& sampling = {});

struct RenderedExample {
    std::string prompt;
    std::string completion;
};

/// Domain examples with context use rag_finetune, without context dsf_finetune.
/// Replay examples render as their raw input and output. Throws TemplateArity
/// when the context size differs from the template's passage slots.
RenderedExample render(const TrainingExample& example, const TemplateSet& templates);

/// JSON-lines row: {example_id, prompt, completion, meta}.
nlohmann::json to_record(const TrainingExample& example, const TemplateSet& templates);

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);
void to_json(nlohmann::json& j, const ReplayItem& r);
void from_json(const nlohmann::json& j, ReplayItem& r);
void to_json(nlohmann::json& j, const ReplayInput& r);
void from_json(const nlohmann::json& j, ReplayInput& r);
void to_json(nlohmann::json& j, const Passage& p);

}  // namespace kforge
