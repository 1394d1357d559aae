#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kforge/corpus.hpp"

namespace kforge {

struct Passage {
    std::string id;
    std::string doc_id;
    ByteSpan span;
    std::size_t token_count = 0;
    std::string text;
};

struct RetrievalResult {
    std::string passage_id;
    double score = 0.0;
    std::size_t rank = 0;  // 1-based

    bool operator==(const RetrievalResult&) const = default;
};

enum class OverlapClass { NoOverlap, SomeOverlap };

std::string_view to_string(OverlapClass c) noexcept;
OverlapClass overlap_class_from_string(std::string_view s);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Passage index over one or more corpora.
///
/// Each document is tiled into passages of at most `passage_tokens` metric
/// tokens; the inverted index stores per-term postings (passage, tf) and
/// passage lengths for BM25. Immutable after build, so concurrent searches are
/// safe. The on-disk form is a JSON document with a magic string and version.
class Index {
public:
    static constexpr std::string_view kMagic = "KFORGE-INDEX";
    static constexpr int kVersion = 1;

    Index() = default;

    /// Throws EmptyCorpus.
    static Index build(const std::vector<Document>& docs, std::size_t passage_tokens = 512,
                       Bm25Params params = {});

    bool built() const noexcept { return built_; }
    const std::vector<Passage>& passages() const noexcept { return passages_; }
    std::size_t passage_tokens() const noexcept { return passage_tokens_; }
    const Bm25Params& params() const noexcept { return params_; }

    const Passage* find(std::string_view passage_id) const;
    const Passage& at(std::string_view passage_id) const;

    /// Passages of `doc_id` whose spans intersect `span`, in document order.
    std::vector<const Passage*> intersecting(std::string_view doc_id, ByteSpan span) const;

    /// BM25 over unique metric query terms. Only passages sharing at least one
    /// term are returned; ties are broken by passage id. Throws IndexNotBuilt.
    std::vector<RetrievalResult> search(std::string_view query, std::size_t k) const;

    std::string serialize() const;
    static Index deserialize(std::string_view data);
    void save(const std::filesystem::path& path) const;
    static Index load(const std::filesystem::path& path);

private:
    struct Posting {
        std::uint32_t passage;
        std::uint32_t tf;
    };

    void rebuild_lookup();

    bool built_ = false;
    std::size_t passage_tokens_ = 512;
    Bm25Params params_;
    std::vector<Passage> passages_;
    std::vector<std::uint32_t> lengths_;
    double avg_length_ = 0.0;
    std::map<std::string, std::vector<Posting>, std::less<>> postings_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_doc_;
};

/// Tiles `doc` into passages of at most `passage_tokens` tokens.
std::vector<Passage> tile_passages(const Document& doc, std::size_t passage_tokens);

/// Sorts by (score desc, id asc), truncates to k and assigns ranks from 1.
void rank_results(std::vector<RetrievalResult>& results, std::size_t k);

/// Ranking strategy over an index.
class SearchBackend {
public:
    virtual ~SearchBackend() = default;
    virtual std::vector<RetrievalResult> search(std::string_view query, std::size_t k) const = 0;
};

class Bm25Backend : public SearchBackend {
public:
    explicit Bm25Backend(std::shared_ptr<const Index> index) : index_(std::move(index)) {}
    std::vector<RetrievalResult> search(std::string_view query, std::size_t k) const override {
        return index_->search(query, k);
    }

private:
    std::shared_ptr<const Index> index_;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) = 0;
};

/// Dense backend: cosine similarity between the query embedding and passage
/// embeddings computed once at construction.
class EmbeddingBackend : public SearchBackend {
public:
    EmbeddingBackend(std::shared_ptr<const Index> index, std::shared_ptr<Embedder> embedder,
                     std::size_t batch_size = 32);
    std::vector<RetrievalResult> search(std::string_view query, std::size_t k) const override;

private:
    std::shared_ptr<const Index> index_;
    std::shared_ptr<Embedder> embedder_;
    std::vector<std::vector<float>> vectors_;
};

/// SomeOverlap iff a retrieved passage lies in gold's document and its span
/// intersects gold's span.
OverlapClass overlap_class(const Index& index, const std::vector<RetrievalResult>& results,
                           const Chunk& gold);

void to_json(nlohmann::json& j, const RetrievalResult& r);
void from_json(const nlohmann::json& j, RetrievalResult& r);

}  // namespace kforge
