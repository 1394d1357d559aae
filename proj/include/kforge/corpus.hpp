#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kforge/error.hpp"
#include "kforge/text.hpp"

namespace kforge {

struct Document {
    std::string id;  // derived from the content hash
    std::string title;
    std::string text;
    std::string domain_name;
};

struct Chunk {
    std::string id;
    std::string doc_id;
    std::size_t index = 0;
    ByteSpan span;
    std::size_t token_count = 0;
};

/// Builds a Document from raw UTF-8 bytes. A leading byte-order mark is dropped.
/// Throws InvalidEncoding or EmptyDocument.
Document ingest(std::string_view bytes, std::string domain_name);
Document ingest_file(const std::filesystem::path& path, std::string domain_name);

/// Splits `doc` on token boundaries. Documents with at most `threshold` tokens
/// stay whole; longer ones are cut into chunks of `threshold / 2` tokens (the
/// last may be shorter). Chunk spans tile the text exactly.
std::vector<Chunk> chunk(const Document& doc, std::size_t threshold, TokenizerSpec spec = {});

/// Documents plus their chunks, with id lookup.
class Corpus {
public:
    Corpus() = default;
    Corpus(std::vector<Document> documents, std::vector<Chunk> chunks);

    /// Chunks every document; duplicate document ids are dropped with a warning.
    static Corpus build(std::vector<Document> documents, std::size_t threshold,
                        std::vector<Warning>* warnings = nullptr);

    const std::vector<Document>& documents() const noexcept { return documents_; }
    const std::vector<Chunk>& chunks() const noexcept { return chunks_; }
    std::size_t threshold() const noexcept { return threshold_; }

    const Document* find_document(std::string_view id) const;
    const Chunk* find_chunk(std::string_view id) const;

    /// Throws UnknownChunk.
    const Chunk& chunk(std::string_view id) const;

    std::string_view text_of(const Chunk& chunk) const;

    nlohmann::json to_json() const;
    static Corpus from_json(const nlohmann::json& j);

private:
    void reindex();

    std::vector<Document> documents_;
    std::vector<Chunk> chunks_;
    std::size_t threshold_ = 0;
    std::unordered_map<std::string, std::size_t> doc_by_id_;
    std::unordered_map<std::string, std::size_t> chunk_by_id_;
};

void to_json(nlohmann::json& j, const Document& d);
void from_json(const nlohmann::json& j, Document& d);
void to_json(nlohmann::json& j, const Chunk& c);
void from_json(const nlohmann::json& j, Chunk& c);

}  // namespace kforge
