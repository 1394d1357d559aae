#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kforge/error.hpp"

namespace kforge {

/// Parses one JSON object per non-blank line. Errors name the 1-based line.
std::vector<nlohmann::json> parse_jsonl(std::string_view data, std::string_view source = "<memory>");
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
    std::string out;
    for (const auto& item : items) {
        out += nlohmann::json(item).dump();
        out.push_back('\n');
    }
    return out;
}

template <typename T>
std::vector<T> from_jsonl(const std::vector<nlohmann::json>& rows) {
    std::vector<T> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        try {
            out.push_back(rows[i].get<T>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::FormatError, "row " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace kforge
