#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kforge {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitStage = 2, kExitUpstream = 3 };

/// Runs the command-line tool. `args` excludes the program name. Results go to
/// `out`; diagnostics and errors (one JSON object per line) go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// UTC ISO-8601 time; SOURCE_DATE_EPOCH replaces the clock when set.
std::string build_timestamp();

/// Standard file names inside the output directory.
namespace outputs {
inline constexpr const char* kCorpus = "corpus.json";
inline constexpr const char* kQA = "qa.jsonl";
inline constexpr const char* kQAAug = "qa_aug.jsonl";
inline constexpr const char* kQASplit = "qa_split.jsonl";
inline constexpr const char* kFilteredOut = "filtered_out.jsonl";
inline constexpr const char* kFactoid = "factoid.jsonl";
inline constexpr const char* kCoverage = "coverage.json";
inline constexpr const char* kIndex = "index.json";
inline constexpr const char* kDataset = "dataset.jsonl";
inline constexpr const char* kReplay = "replay.jsonl";
inline constexpr const char* kEvalReport = "eval_report.json";
inline constexpr const char* kEvalCsv = "eval_summary.csv";
inline constexpr const char* kRegression = "regression.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace outputs

}  // namespace kforge
