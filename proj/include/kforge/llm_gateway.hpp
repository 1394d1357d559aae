#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kforge/error.hpp"

namespace kforge {

using Variables = std::map<std::string, std::string>;

namespace template_id {
inline constexpr std::string_view kQaGeneration = "qa_generation";        // P1
inline constexpr std::string_view kMultipleAnswers = "multiple_answers";  // P2
inline constexpr std::string_view kRagFinetune = "rag_finetune";
inline constexpr std::string_view kDsfFinetune = "dsf_finetune";
inline constexpr std::string_view kJudge = "judge";
inline constexpr std::string_view kTestFilter = "test_filter";
inline constexpr std::string_view kReplay = "replay";
}  // namespace template_id

struct Sampling {
    double temperature = 0.7;
    double top_p = 0.95;
    int max_tokens = 2048;
    std::optional<std::uint64_t> seed;
};

struct ChatRequest {
    std::string template_id;
    Variables variables;
    Sampling sampling;
};

/// Prompt templates with `{placeholder}` slots, keyed by id.
class TemplateSet {
public:
    /// The templates compiled into the library from templates/*.txt.
    static TemplateSet builtin();

    /// Built-ins overridden by every `<id>.txt` in `dir`.
    static TemplateSet with_overrides(const std::filesystem::path& dir);

    void set(std::string id, std::string text);
    bool contains(std::string_view id) const;

    /// Throws TemplateError for unknown ids.
    const std::string& get(std::string_view id) const;

    std::vector<std::string> ids() const;

private:
    std::map<std::string, std::string, std::less<>> templates_;
};

/// Placeholder names in order of first appearance.
std::vector<std::string> placeholders(std::string_view tmpl);

/// Single-pass substitution; braces inside substituted values are left alone.
/// Throws TemplateError naming the first unbound placeholder.
std::string render_template(std::string_view tmpl, const Variables& vars);

struct TaggedSpan {
    std::string tag;
    std::string body;
    std::size_t offset = 0;  // byte offset of the opening tag
};

struct TagParse {
    std::vector<TaggedSpan> spans;
    std::vector<Warning> warnings;
    bool unbalanced = false;  // an opening tag had no closer before end of input
};

/// Extracts well-formed `<tag>..</tag>` bodies in document order. Input after the
/// first `</done>` is ignored. An opener re-opened before closing is dropped with
/// a warning; a dangling final opener sets `unbalanced`.
TagParse parse_tagged(std::string_view raw, std::string_view tag);

/// Like parse_tagged for several tags at once, merged by offset.
TagParse parse_tagged(std::string_view raw, const std::vector<std::string>& tags);

/// Value after the first line starting with `label:` (case-insensitive,
/// surrounding whitespace and markdown emphasis trimmed). Throws LabelMissing.
std::string parse_labeled_line(std::string_view raw, std::string_view label);

struct RenderedRequest {
    std::string template_id;
    std::string prompt;
    Variables variables;
    Sampling sampling;
    std::string model;
};

/// Failure that the gateway may retry (connection errors, 429, 5xx).
class RetryableError : public Error {
public:
    using Error::Error;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string send(const RenderedRequest& request) = 0;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

struct GatewayOptions {
    std::string model;
    RetryPolicy retry;
    std::size_t max_in_flight = 4;
};

/// Result slot of a batch call.
struct Completion {
    std::string text;
    std::optional<Error> error;

    bool ok() const noexcept { return !error.has_value(); }
};

/// Renders templates and dispatches to a backend with retries.
///
/// Retryable failures are retried up to `retry.max_retries` times with exponential
/// backoff; the last failure is rethrown as a plain Error with the same code.
/// Batches run at most `max_in_flight` requests concurrently and return results
/// by request index.
class Gateway {
public:
    Gateway(std::shared_ptr<ChatBackend> backend, TemplateSet templates, GatewayOptions options = {});

    std::string render(const ChatRequest& request) const;
    std::string complete(const ChatRequest& request) const;
    std::vector<Completion> complete_batch(const std::vector<ChatRequest>& requests) const;

    const TemplateSet& templates() const noexcept { return templates_; }
    const GatewayOptions& options() const noexcept { return options_; }

    /// Hook replacing the backoff sleep; tests use it to observe delays.
    void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

private:
    std::shared_ptr<ChatBackend> backend_;
    TemplateSet templates_;
    GatewayOptions options_;
    std::function<void(std::chrono::milliseconds)> sleeper_;
};

/// Deterministic offline backend.
///
/// Responses come from `<fixture_dir>/<template_id>/`: first `<key>.s<seed>.txt`,
/// then `<key>.txt`, then `default.txt`, where key is fixture_key(). Without a
/// fixture, a built-in responder synthesizes well-formed output from the
/// request variables. Output depends only on the request and its seed.
class MockBackend : public ChatBackend {
public:
    explicit MockBackend(std::filesystem::path fixture_dir = {});

    static std::string fixture_key(std::string_view template_id, const Variables& vars);

    std::string send(const RenderedRequest& request) override;

private:
    std::filesystem::path dir_;
};

/// Canned synthesized output for a request, used when no fixture matches.
std::string synthesize_mock_response(const RenderedRequest& request);

}  // namespace kforge
