#include "kforge/text.hpp"

#include <algorithm>
#include <cstdint>

namespace kforge {
namespace {

struct Decoded {
    char32_t cp;
    std::size_t len;
    bool valid;
};

Decoded decode(std::string_view s, std::size_t i) noexcept {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) return {b0, 1, true};

    std::size_t len = 0;
    char32_t cp = 0;
    char32_t min = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2, cp = b0 & 0x1F, min = 0x80;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3, cp = b0 & 0x0F, min = 0x800;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4, cp = b0 & 0x07, min = 0x10000;
    } else {
        return {0xFFFD, 1, false};
    }
    if (i + len > s.size()) return {0xFFFD, 1, false};
    for (std::size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return {0xFFFD, 1, false};
        cp = (cp << 6) | (b & 0x3F);
    }
    if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {0xFFFD, 1, false};
    return {cp, len, true};
}

void encode(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Unicode White_Space property.
bool is_space(char32_t cp) noexcept {
    return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
           cp == 0x205F || cp == 0x3000;
}

bool is_punct(char32_t cp) noexcept {
    if (cp < 0x80) {
        return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
               (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
    }
    switch (cp) {
        case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
            return true;
        default:
            break;
    }
    return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
           (cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011) ||
           (cp >= 0xFF01 && cp <= 0xFF0F);
}

char32_t to_lower(char32_t cp) noexcept {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;      // Latin-1
    if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;   // Greek
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;                  // Cyrillic
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    return cp;
}

// Calls fn(span) for every maximal run of non-whitespace code points.
template <typename Fn>
void for_each_word(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    std::size_t word_begin = 0;
    bool in_word = false;
    while (i < text.size()) {
        const Decoded d = decode(text, i);
        const bool space = d.valid && is_space(d.cp);
        if (space && in_word) {
            fn(ByteSpan{word_begin, i});
            in_word = false;
        } else if (!space && !in_word) {
            word_begin = i;
            in_word = true;
        }
        i += d.len;
    }
    if (in_word) fn(ByteSpan{word_begin, text.size()});
}

std::string normalize_word(std::string_view word) {
    std::string out;
    out.reserve(word.size());
    std::size_t i = 0;
    while (i < word.size()) {
        const Decoded d = decode(word, i);
        if (!d.valid) {
            out.append(word.substr(i, d.len));
        } else if (!is_punct(d.cp)) {
            encode(to_lower(d.cp), out);
        }
        i += d.len;
    }
    return out;
}

}  // namespace

bool is_valid_utf8(std::string_view text) noexcept {
    std::size_t i = 0;
    while (i < text.size()) {
        const Decoded d = decode(text, i);
        if (!d.valid) return false;
        i += d.len;
    }
    return true;
}

std::vector<std::string> tokenize(std::string_view text, TokenizerSpec spec) {
    std::vector<std::string> tokens;
    for_each_word(text, [&](ByteSpan w) {
        const auto word = text.substr(w.begin, w.size());
        if (spec.mode == TokenizerMode::Raw) {
            tokens.emplace_back(word);
            return;
        }
        auto norm = normalize_word(word);
        if (!norm.empty()) tokens.push_back(std::move(norm));
    });
    return tokens;
}

std::vector<ByteSpan> token_spans(std::string_view text, TokenizerSpec spec) {
    std::vector<ByteSpan> spans;
    for_each_word(text, [&](ByteSpan w) {
        if (spec.mode == TokenizerMode::Raw || !normalize_word(text.substr(w.begin, w.size())).empty())
            spans.push_back(w);
    });
    return spans;
}

std::size_t count_tokens(std::string_view text, TokenizerSpec spec) {
    std::size_t n = 0;
    for_each_word(text, [&](ByteSpan w) {
        if (spec.mode == TokenizerMode::Raw || !normalize_word(text.substr(w.begin, w.size())).empty())
            ++n;
    });
    return n;
}

std::string normalize(std::string_view text) {
    std::string out;
    for (const auto& tok : tokenize(text)) {
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

std::string trim(std::string_view text) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto b = text.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = text.find_last_not_of(ws);
    return std::string(text.substr(b, e - b + 1));
}

std::string to_lower_ascii(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
        return static_cast<char>(c >= 'A' && c <= 'Z' ? c + 0x20 : c);
    });
    return out;
}

}  // namespace kforge
