#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace kforge {

enum class TokenizerMode {
    Metric,  // lowercase, strip punctuation, split on Unicode whitespace
    Raw,     // split on Unicode whitespace only
};

struct TokenizerSpec {
    TokenizerMode mode = TokenizerMode::Metric;
};

/// Half-open byte range [begin, end).
struct ByteSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool intersects(const ByteSpan& other) const noexcept {
        return begin < end && other.begin < other.end && begin < other.end && other.begin < end;
    }
    bool operator==(const ByteSpan&) const = default;
};

bool is_valid_utf8(std::string_view text) noexcept;

std::vector<std::string> tokenize(std::string_view text, TokenizerSpec spec = {});

/// Byte spans of the words that produce a token under `spec`, in order.
/// `tokenize(text, spec)[i]` is the normalized form of `text` at `token_spans(...)[i]`.
std::vector<ByteSpan> token_spans(std::string_view text, TokenizerSpec spec = {});

std::size_t count_tokens(std::string_view text, TokenizerSpec spec = {});

/// Metric tokens joined by single spaces; used as the equality key for dedupe.
std::string normalize(std::string_view text);

std::string trim(std::string_view text);

std::string to_lower_ascii(std::string_view text);

}  // namespace kforge
