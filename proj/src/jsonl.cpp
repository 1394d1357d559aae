#include "kforge/jsonl.hpp"

#include "kforge/error.hpp"
#include "kforge/util.hpp"

namespace kforge {

std::vector<nlohmann::json> parse_jsonl(std::string_view data, std::string_view source) {
    std::vector<nlohmann::json> rows;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < data.size()) {
        auto nl = data.find('\n', pos);
        if (nl == std::string_view::npos) nl = data.size();
        const auto line = data.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::FormatError,
                        std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    return parse_jsonl(read_file(path), path.string());
}

}  // namespace kforge
