#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kforge/corpus.hpp"
#include "kforge/llm_gateway.hpp"
#include "kforge/qa_forge.hpp"
#include "kforge/retriever.hpp"

namespace kforge {

/// Multiset recall of gold metric tokens in the prediction. Empty gold is 1.0.
double token_recall(std::string_view gold, std::string_view prediction);

/// ROUGE-L F1 (beta = 1) over metric tokens. Two empty inputs score 1.0; one
/// empty input scores 0.0.
double rouge_l(std::string_view gold, std::string_view prediction);

/// Length of the longest common subsequence of two token sequences.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct JudgeVerdict {
    int score = 0;
    std::string explanation;
};

/// Reads `<score>` (must be 0 or 1) and `<explanation>` from a judge reply.
/// Throws JudgeParseError.
JudgeVerdict parse_judge(std::string_view raw);

/// Renders the judge prompt, sends it and parses the verdict.
JudgeVerdict judge(std::string_view question, std::string_view gold, std::string_view prediction,
                   const Gateway& gateway, const Sampling& sampling = {});

struct Prediction {
    std::string question_id;
    std::string prediction;
};

struct EvalRecord {
    std::string question_id;
    std::string question;
    std::string gold;
    std::string prediction;
    std::vector<RetrievalResult> retrieved;
    OverlapClass overlap = OverlapClass::NoOverlap;
    double token_recall = 0.0;
    std::optional<int> judge_score;
    std::optional<std::string> judge_explanation;
    bool judge_flagged = false;  // judge reply could not be used
    bool factoid = false;
};

struct Aggregate {
    std::size_t count = 0;
    double token_recall = 0.0;  // mean over records
    std::size_t judged = 0;
    std::optional<double> judge_accuracy;  // mean over judged records
    std::size_t judge_flagged = 0;
};

struct EvalConfig {
    std::size_t k = 5;
    bool use_judge = false;
    bool factoid = false;
    std::size_t factoid_max_words = 8;
    Sampling judge_sampling;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    Aggregate overall;
    Aggregate no_overlap;
    Aggregate some_overlap;
    std::optional<Aggregate> factoid;
    std::vector<std::string> missing_predictions;
    std::vector<Warning> warnings;
};

Aggregate aggregate(const std::vector<const EvalRecord*>& records);

/// Scores predictions against test pairs (split test, or unsplit). Retrieval
/// uses the top cfg.k passages for the question; a judge gateway is required
/// when cfg.use_judge. Questions without a prediction are listed in
/// missing_predictions and excluded from the means.
EvalReport evaluate_run(const std::vector<Prediction>& predictions, const std::vector<QAPair>& test_pairs,
                        const Index& index, const Corpus& corpus, const EvalConfig& cfg,
                        const Gateway* judge_gateway = nullptr);

/// One row per subset: subset,count,token_recall,judged,judge_accuracy,judge_flagged.
std::string report_csv(const EvalReport& report);

struct RegressionReport {
    double mmlu = 0.0;
    double gsm8k_flexible = 0.0;
    double gsm8k_strict = 0.0;
    double hellaswag = 0.0;
    double tqa_mc1 = 0.0;
    double tqa_mc2 = 0.0;
    double tqa_gen_rougel = 0.0;
    double average = 0.0;
};

/// Average of mmlu, mean(gsm8k flexible, strict), hellaswag, mean(tqa mc1, mc2)
/// and tqa generation ROUGE-L. Throws MissingScore.
RegressionReport regression_average(const nlohmann::json& scores);

void to_json(nlohmann::json& j, const Prediction& p);
void from_json(const nlohmann::json& j, Prediction& p);
void to_json(nlohmann::json& j, const EvalRecord& r);
void to_json(nlohmann::json& j, const Aggregate& a);
void to_json(nlohmann::json& j, const EvalReport& r);
void to_json(nlohmann::json& j, const RegressionReport& r);

}  // namespace kforge
