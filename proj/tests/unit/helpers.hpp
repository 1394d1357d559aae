#pragma once

#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "kforge/corpus.hpp"
#include "kforge/llm_gateway.hpp"
#include "kforge/util.hpp"

namespace kt {

namespace fs = std::filesystem;

inline fs::path source_dir() { return KFORGE_SOURCE_DIR; }

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("kforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// Text of exactly n metric tokens drawn from a small vocabulary, with
// punctuation, line breaks and paragraph breaks mixed in.
inline std::string synthetic_text(std::size_t n, kforge::Rng& rng, std::size_t vocab = 200) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) {
            const auto r = rng.below(20);
            out += r == 0 ? "\n\n" : r == 1 ? "\n" : r == 2 ? "  " : " ";
        }
        out += "w" + std::to_string(rng.below(vocab));
        const auto p = rng.below(10);
        if (p == 0) out += ".";
        else if (p == 1) out += ",";
    }
    return out;
}

inline kforge::Document make_doc(const std::string& title, const std::string& body) {
    return kforge::ingest(title + "\n" + body, "test");
}

// Backend answering through a callback; counts calls.
class ScriptedBackend : public kforge::ChatBackend {
public:
    using Fn = std::function<std::string(const kforge::RenderedRequest&, int call)>;
    explicit ScriptedBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string send(const kforge::RenderedRequest& r) override { return fn_(r, calls++); }
    std::atomic<int> calls{0};

private:
    Fn fn_;
};

inline std::shared_ptr<ScriptedBackend> scripted(ScriptedBackend::Fn fn) {
    return std::make_shared<ScriptedBackend>(std::move(fn));
}

inline kforge::Gateway gateway_for(std::shared_ptr<kforge::ChatBackend> backend, std::size_t in_flight = 4) {
    kforge::GatewayOptions opts;
    opts.max_in_flight = in_flight;
    kforge::Gateway gw(std::move(backend), kforge::TemplateSet::builtin(), opts);
    gw.set_sleeper([](std::chrono::milliseconds) {});
    return gw;
}

inline kforge::Gateway mock_gateway(std::size_t in_flight = 4) {
    return gateway_for(std::make_shared<kforge::MockBackend>(), in_flight);
}

// Corpus of the documents under tests/data/docs.
inline kforge::Corpus fixture_corpus(std::size_t threshold = 8000) {
    std::vector<kforge::Document> docs;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(source_dir() / "tests/data/docs")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) docs.push_back(kforge::ingest_file(f, "test"));
    return kforge::Corpus::build(std::move(docs), threshold);
}

template <typename Fn>
kforge::ErrorCode error_code_of(Fn&& fn) {
    try {
        fn();
    } catch (const kforge::Error& e) {
        return e.code();
    }
    FAIL("expected kforge::Error");
    return kforge::ErrorCode::IoError;
}

}  // namespace kt
