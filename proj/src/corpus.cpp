#include "kforge/corpus.hpp"

#include <cstdio>
#include <unordered_set>

#include "kforge/util.hpp"

namespace kforge {
namespace {

constexpr std::string_view kBom = "\xEF\xBB\xBF";
constexpr int kCorpusVersion = 1;

std::string first_nonempty_line(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = trim(text.substr(pos, nl - pos));
        if (!line.empty()) return line;
        pos = nl + 1;
    }
    return {};
}

std::string chunk_id(const std::string& doc_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "#c%04zu", index);
    return doc_id + buf;
}

}  // namespace

Document ingest(std::string_view bytes, std::string domain_name) {
    if (!is_valid_utf8(bytes)) throw Error(ErrorCode::InvalidEncoding, "document is not valid UTF-8");
    if (bytes.starts_with(kBom)) bytes.remove_prefix(kBom.size());
    auto title = first_nonempty_line(bytes);
    if (title.empty()) throw Error(ErrorCode::EmptyDocument, "document has no content");

    Document doc;
    doc.id = "doc-" + sha256_hex(bytes).substr(0, 16);
    doc.title = std::move(title);
    doc.text = std::string(bytes);
    doc.domain_name = std::move(domain_name);
    return doc;
}

Document ingest_file(const std::filesystem::path& path, std::string domain_name) {
    try {
        return ingest(read_file(path), std::move(domain_name));
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

std::vector<Chunk> chunk(const Document& doc, std::size_t threshold, TokenizerSpec spec) {
    if (threshold < 2) throw Error(ErrorCode::InvalidArgument, "chunk threshold must be >= 2");

    const auto spans = token_spans(doc.text, spec);
    const std::size_t n = spans.size();
    std::vector<Chunk> chunks;

    if (n <= threshold) {
        chunks.push_back({chunk_id(doc.id, 0), doc.id, 0, {0, doc.text.size()}, n});
        return chunks;
    }

    const std::size_t size = threshold / 2;
    const std::size_t count = (n + size - 1) / size;
    chunks.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t first = i * size;
        const std::size_t next = first + size;
        ByteSpan span;
        span.begin = i == 0 ? 0 : spans[first].begin;
        span.end = next >= n ? doc.text.size() : spans[next].begin;
        chunks.push_back({chunk_id(doc.id, i), doc.id, i, span, std::min(size, n - first)});
    }
    return chunks;
}

Corpus::Corpus(std::vector<Document> documents, std::vector<Chunk> chunks)
    : documents_(std::move(documents)), chunks_(std::move(chunks)) {
    reindex();
}

Corpus Corpus::build(std::vector<Document> documents, std::size_t threshold,
                     std::vector<Warning>* warnings) {
    Corpus corpus;
    corpus.threshold_ = threshold;
    std::unordered_set<std::string> seen;
    for (auto& doc : documents) {
        if (!seen.insert(doc.id).second) {
            if (warnings) warnings->push_back({"duplicate_document", doc.id});
            continue;
        }
        auto cs = kforge::chunk(doc, threshold);
        corpus.chunks_.insert(corpus.chunks_.end(), cs.begin(), cs.end());
        corpus.documents_.push_back(std::move(doc));
    }
    corpus.reindex();
    return corpus;
}

void Corpus::reindex() {
    doc_by_id_.clear();
    chunk_by_id_.clear();
    for (std::size_t i = 0; i < documents_.size(); ++i) doc_by_id_.emplace(documents_[i].id, i);
    for (std::size_t i = 0; i < chunks_.size(); ++i) chunk_by_id_.emplace(chunks_[i].id, i);
}

const Document* Corpus::find_document(std::string_view id) const {
    auto it = doc_by_id_.find(std::string(id));
    return it == doc_by_id_.end() ? nullptr : &documents_[it->second];
}

const Chunk* Corpus::find_chunk(std::string_view id) const {
    auto it = chunk_by_id_.find(std::string(id));
    return it == chunk_by_id_.end() ? nullptr : &chunks_[it->second];
}

const Chunk& Corpus::chunk(std::string_view id) const {
    if (const auto* c = find_chunk(id)) return *c;
    throw Error(ErrorCode::UnknownChunk, "unknown chunk id: " + std::string(id));
}

std::string_view Corpus::text_of(const Chunk& c) const {
    const auto* doc = find_document(c.doc_id);
    if (!doc) throw Error(ErrorCode::UnknownChunk, "chunk " + c.id + " references unknown document");
    return std::string_view(doc->text).substr(c.span.begin, c.span.size());
}

nlohmann::json Corpus::to_json() const {
    return {
        {"format", "kforge-corpus"},
        {"version", kCorpusVersion},
        {"threshold", threshold_},
        {"documents", documents_},
        {"chunks", chunks_},
    };
}

Corpus Corpus::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "kforge-corpus")
        throw Error(ErrorCode::FormatError, "not a corpus manifest");
    if (j.value("version", 0) != kCorpusVersion)
        throw Error(ErrorCode::FormatError, "unsupported corpus manifest version");
    Corpus c(j.at("documents").get<std::vector<Document>>(), j.at("chunks").get<std::vector<Chunk>>());
    c.threshold_ = j.value("threshold", std::size_t{0});
    return c;
}

void to_json(nlohmann::json& j, const Document& d) {
    j = {{"id", d.id}, {"title", d.title}, {"domain_name", d.domain_name}, {"text", d.text}};
}

void from_json(const nlohmann::json& j, Document& d) {
    j.at("id").get_to(d.id);
    j.at("title").get_to(d.title);
    j.at("domain_name").get_to(d.domain_name);
    j.at("text").get_to(d.text);
}

void to_json(nlohmann::json& j, const Chunk& c) {
    j = {{"id", c.id},
         {"doc_id", c.doc_id},
         {"index", c.index},
         {"span", {c.span.begin, c.span.end}},
         {"token_count", c.token_count}};
}

void from_json(const nlohmann::json& j, Chunk& c) {
    j.at("id").get_to(c.id);
    j.at("doc_id").get_to(c.doc_id);
    j.at("index").get_to(c.index);
    c.span.begin = j.at("span").at(0).get<std::size_t>();
    c.span.end = j.at("span").at(1).get<std::size_t>();
    j.at("token_count").get_to(c.token_count);
}

}  // namespace kforge
