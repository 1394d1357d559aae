#include "kforge/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "kforge/util.hpp"

namespace kforge {
namespace {

std::string passage_id(const std::string& doc_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "#p%05zu", index);
    return doc_id + buf;
}

double idf(std::size_t n, std::size_t df) {
    return std::log(1.0 + (static_cast<double>(n) - static_cast<double>(df) + 0.5) /
                              (static_cast<double>(df) + 0.5));
}

}  // namespace

std::string_view to_string(OverlapClass c) noexcept {
    return c == OverlapClass::SomeOverlap ? "some_overlap" : "no_overlap";
}

OverlapClass overlap_class_from_string(std::string_view s) {
    if (s == "some_overlap") return OverlapClass::SomeOverlap;
    if (s == "no_overlap") return OverlapClass::NoOverlap;
    throw Error(ErrorCode::FormatError, "unknown overlap class: " + std::string(s));
}

std::vector<Passage> tile_passages(const Document& doc, std::size_t passage_tokens) {
    if (passage_tokens == 0) throw Error(ErrorCode::InvalidArgument, "passage_tokens must be > 0");
    const auto spans = token_spans(doc.text);
    const std::size_t n = spans.size();
    const std::size_t count = std::max<std::size_t>(1, (n + passage_tokens - 1) / passage_tokens);

    std::vector<Passage> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t first = i * passage_tokens;
        const std::size_t next = first + passage_tokens;
        ByteSpan span;
        span.begin = i == 0 ? 0 : spans[first].begin;
        span.end = next >= n ? doc.text.size() : spans[next].begin;
        out.push_back({passage_id(doc.id, i), doc.id, span, n == 0 ? 0 : std::min(passage_tokens, n - first),
                       doc.text.substr(span.begin, span.size())});
    }
    return out;
}

void rank_results(std::vector<RetrievalResult>& results, std::size_t k) {
    std::sort(results.begin(), results.end(), [](const RetrievalResult& a, const RetrievalResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.passage_id < b.passage_id;
    });
    if (results.size() > k) results.resize(k);
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = i + 1;
}

Index Index::build(const std::vector<Document>& docs, std::size_t passage_tokens, Bm25Params params) {
    if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot build an index over zero documents");

    Index idx;
    idx.passage_tokens_ = passage_tokens;
    idx.params_ = params;
    for (const auto& doc : docs) {
        auto ps = tile_passages(doc, passage_tokens);
        idx.passages_.insert(idx.passages_.end(), std::make_move_iterator(ps.begin()),
                             std::make_move_iterator(ps.end()));
    }

    double total = 0.0;
    for (std::uint32_t p = 0; p < idx.passages_.size(); ++p) {
        const auto tokens = tokenize(idx.passages_[p].text);
        std::map<std::string, std::uint32_t, std::less<>> tf;
        for (const auto& t : tokens) ++tf[t];
        for (auto& [term, count] : tf) idx.postings_[term].push_back({p, count});
        idx.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total += static_cast<double>(tokens.size());
    }
    idx.avg_length_ = total / static_cast<double>(idx.passages_.size());
    idx.built_ = true;
    idx.rebuild_lookup();
    return idx;
}

void Index::rebuild_lookup() {
    by_id_.clear();
    by_doc_.clear();
    for (std::size_t i = 0; i < passages_.size(); ++i) {
        by_id_.emplace(passages_[i].id, i);
        by_doc_[passages_[i].doc_id].push_back(i);
    }
}

const Passage* Index::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &passages_[it->second];
}

const Passage& Index::at(std::string_view id) const {
    if (const auto* p = find(id)) return *p;
    throw Error(ErrorCode::FormatError, "unknown passage id: " + std::string(id));
}

std::vector<const Passage*> Index::intersecting(std::string_view doc_id, ByteSpan span) const {
    std::vector<const Passage*> out;
    auto it = by_doc_.find(std::string(doc_id));
    if (it == by_doc_.end()) return out;
    for (auto i : it->second)
        if (passages_[i].span.intersects(span)) out.push_back(&passages_[i]);
    return out;
}

std::vector<RetrievalResult> Index::search(std::string_view query, std::size_t k) const {
    if (!built_) throw Error(ErrorCode::IndexNotBuilt, "index has not been built or loaded");
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");

    const auto tokens = tokenize(query);
    const std::set<std::string> terms(tokens.begin(), tokens.end());
    const std::size_t n = passages_.size();

    std::vector<double> scores(n, 0.0);
    std::vector<bool> hit(n, false);
    for (const auto& term : terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double w = idf(n, it->second.size());
        for (const auto& post : it->second) {
            const double tf = post.tf;
            const double norm =
                params_.k1 * (1.0 - params_.b + params_.b * static_cast<double>(lengths_[post.passage]) / avg_length_);
            scores[post.passage] += w * tf * (params_.k1 + 1.0) / (tf + norm);
            hit[post.passage] = true;
        }
    }

    std::vector<RetrievalResult> results;
    for (std::size_t i = 0; i < n; ++i)
        if (hit[i]) results.push_back({passages_[i].id, scores[i], 0});
    rank_results(results, k);
    return results;
}

std::string Index::serialize() const {
    if (!built_) throw Error(ErrorCode::IndexNotBuilt, "cannot serialize an unbuilt index");
    nlohmann::json postings = nlohmann::json::object();
    for (const auto& [term, list] : postings_) {
        auto& arr = postings[term] = nlohmann::json::array();
        for (const auto& p : list) arr.push_back({p.passage, p.tf});
    }
    nlohmann::json passages = nlohmann::json::array();
    for (const auto& p : passages_)
        passages.push_back({{"id", p.id},
                            {"doc_id", p.doc_id},
                            {"span", {p.span.begin, p.span.end}},
                            {"token_count", p.token_count},
                            {"text", p.text}});
    nlohmann::json j = {
        {"magic", kMagic},
        {"version", kVersion},
        {"backend", "bm25"},
        {"params", {{"k1", params_.k1}, {"b", params_.b}, {"passage_tokens", passage_tokens_}}},
        {"passages", std::move(passages)},
        {"lengths", lengths_},
        {"avg_length", avg_length_},
        {"postings", std::move(postings)},
    };
    return j.dump() + "\n";
}

Index Index::deserialize(std::string_view data) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(data);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatError, std::string("index is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("magic", "") != kMagic)
        throw Error(ErrorCode::FormatError, "not a kforge index file");
    if (j.value("version", 0) != kVersion)
        throw Error(ErrorCode::FormatError, "unsupported index version " + j.value("version", nlohmann::json()).dump());

    Index idx;
    const auto& params = j.at("params");
    params.at("k1").get_to(idx.params_.k1);
    params.at("b").get_to(idx.params_.b);
    params.at("passage_tokens").get_to(idx.passage_tokens_);
    for (const auto& p : j.at("passages")) {
        Passage passage;
        p.at("id").get_to(passage.id);
        p.at("doc_id").get_to(passage.doc_id);
        passage.span = {p.at("span").at(0).get<std::size_t>(), p.at("span").at(1).get<std::size_t>()};
        p.at("token_count").get_to(passage.token_count);
        p.at("text").get_to(passage.text);
        idx.passages_.push_back(std::move(passage));
    }
    j.at("lengths").get_to(idx.lengths_);
    j.at("avg_length").get_to(idx.avg_length_);
    for (const auto& [term, list] : j.at("postings").items()) {
        auto& out = idx.postings_[term];
        for (const auto& e : list) out.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>()});
    }
    if (idx.lengths_.size() != idx.passages_.size())
        throw Error(ErrorCode::FormatError, "index lengths do not match passages");
    idx.built_ = true;
    idx.rebuild_lookup();
    return idx;
}

void Index::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Index Index::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw Error(ErrorCode::IndexNotBuilt, "no index at " + path.string());
    return deserialize(read_file(path));
}

EmbeddingBackend::EmbeddingBackend(std::shared_ptr<const Index> index, std::shared_ptr<Embedder> embedder,
                                   std::size_t batch_size)
    : index_(std::move(index)), embedder_(std::move(embedder)) {
    if (!index_ || !index_->built()) throw Error(ErrorCode::IndexNotBuilt, "embedding backend needs a built index");
    batch_size = std::max<std::size_t>(1, batch_size);
    const auto& ps = index_->passages();
    for (std::size_t i = 0; i < ps.size(); i += batch_size) {
        std::vector<std::string> batch;
        for (std::size_t j = i; j < std::min(ps.size(), i + batch_size); ++j) batch.push_back(ps[j].text);
        auto vecs = embedder_->embed(batch);
        if (vecs.size() != batch.size())
            throw Error(ErrorCode::ProtocolStatus, "embedder returned a wrong number of vectors");
        for (auto& v : vecs) vectors_.push_back(std::move(v));
    }
}

std::vector<RetrievalResult> EmbeddingBackend::search(std::string_view query, std::size_t k) const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    const auto q = embedder_->embed({std::string(query)}).at(0);
    auto norm = [](const std::vector<float>& v) {
        double s = 0.0;
        for (float x : v) s += static_cast<double>(x) * x;
        return std::sqrt(s);
    };
    const double qn = norm(q);
    std::vector<RetrievalResult> results;
    const auto& ps = index_->passages();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& v = vectors_[i];
        if (v.size() != q.size()) throw Error(ErrorCode::ProtocolStatus, "embedding dimension mismatch");
        double dot = 0.0;
        for (std::size_t d = 0; d < v.size(); ++d) dot += static_cast<double>(v[d]) * q[d];
        const double denom = qn * norm(v);
        results.push_back({ps[i].id, denom > 0.0 ? dot / denom : 0.0, 0});
    }
    rank_results(results, k);
    return results;
}

OverlapClass overlap_class(const Index& index, const std::vector<RetrievalResult>& results, const Chunk& gold) {
    for (const auto& r : results) {
        const auto* p = index.find(r.passage_id);
        if (p && p->doc_id == gold.doc_id && p->span.intersects(gold.span)) return OverlapClass::SomeOverlap;
    }
    return OverlapClass::NoOverlap;
}

void to_json(nlohmann::json& j, const RetrievalResult& r) {
    j = {{"passage_id", r.passage_id}, {"score", r.score}, {"rank", r.rank}};
}

void from_json(const nlohmann::json& j, RetrievalResult& r) {
    j.at("passage_id").get_to(r.passage_id);
    j.at("score").get_to(r.score);
    j.at("rank").get_to(r.rank);
}

}  // namespace kforge
