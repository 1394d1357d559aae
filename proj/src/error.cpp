#include "kforge/error.hpp"

namespace kforge {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidEncoding: return "InvalidEncoding";
        case ErrorCode::EmptyDocument: return "EmptyDocument";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::TemplateError: return "TemplateError";
        case ErrorCode::TemplateArity: return "TemplateArity";
        case ErrorCode::Transport: return "Transport";
        case ErrorCode::ProtocolStatus: return "ProtocolStatus";
        case ErrorCode::LabelMissing: return "LabelMissing";
        case ErrorCode::GenerationEmpty: return "GenerationEmpty";
        case ErrorCode::UnknownChunk: return "UnknownChunk";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::IndexNotBuilt: return "IndexNotBuilt";
        case ErrorCode::MissingChapterMap: return "MissingChapterMap";
        case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
        case ErrorCode::JudgeParseError: return "JudgeParseError";
        case ErrorCode::MissingPrediction: return "MissingPrediction";
        case ErrorCode::MissingScore: return "MissingScore";
        case ErrorCode::InsufficientDistractors: return "InsufficientDistractors";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::StageMissing: return "StageMissing";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::FormatError: return "FormatError";
    }
    return "Unknown";
}

}  // namespace kforge
