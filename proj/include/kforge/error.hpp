#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kforge {

enum class ErrorCode {
    InvalidEncoding,
    EmptyDocument,
    InvalidArgument,
    TemplateError,
    TemplateArity,
    Transport,
    ProtocolStatus,
    LabelMissing,
    GenerationEmpty,
    UnknownChunk,
    EmptyCorpus,
    IndexNotBuilt,
    MissingChapterMap,
    EmptyTrainSplit,
    JudgeParseError,
    MissingPrediction,
    MissingScore,
    InsufficientDistractors,
    ConfigError,
    StageMissing,
    IoError,
    FormatError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// True for failures of an upstream service (LLM or embedding endpoint).
    bool is_upstream() const noexcept {
        return code_ == ErrorCode::Transport || code_ == ErrorCode::ProtocolStatus;
    }

private:
    ErrorCode code_;
};

/// Non-fatal diagnostic surfaced alongside a result.
struct Warning {
    std::string code;
    std::string detail;

    bool operator==(const Warning&) const = default;
};

}  // namespace kforge
