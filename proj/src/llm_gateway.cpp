#include "kforge/llm_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <thread>

#include "kforge/text.hpp"
#include "kforge/util.hpp"

namespace kforge {

// Generated from templates/*.txt at configure time.
const std::map<std::string, std::string>& builtin_template_texts();

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Length of a `{name}` placeholder starting at `i`, or 0.
std::size_t placeholder_at(std::string_view s, std::size_t i) {
    if (s[i] != '{' || i + 2 >= s.size() || !is_ident_start(s[i + 1])) return 0;
    std::size_t j = i + 2;
    while (j < s.size() && is_ident(s[j])) ++j;
    return j < s.size() && s[j] == '}' ? j - i + 1 : 0;
}

std::string_view before_done(std::string_view raw) {
    const auto done = raw.find("</done>");
    return done == std::string_view::npos ? raw : raw.substr(0, done);
}

std::string strip_emphasis(std::string_view s) {
    auto t = trim(s);
    const auto b = t.find_first_not_of("*_");
    if (b == std::string::npos) return {};
    const auto e = t.find_last_not_of("*_");
    return trim(std::string_view(t).substr(b, e - b + 1));
}

}  // namespace

TemplateSet TemplateSet::builtin() {
    TemplateSet set;
    for (const auto& [id, text] : builtin_template_texts()) set.set(id, text);
    return set;
}

TemplateSet TemplateSet::with_overrides(const std::filesystem::path& dir) {
    auto set = builtin();
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            set.set(entry.path().stem().string(), read_file(entry.path()));
    }
    return set;
}

void TemplateSet::set(std::string id, std::string text) { templates_[std::move(id)] = std::move(text); }

bool TemplateSet::contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }

const std::string& TemplateSet::get(std::string_view id) const {
    auto it = templates_.find(id);
    if (it == templates_.end())
        throw Error(ErrorCode::TemplateError, "unknown template: " + std::string(id));
    return it->second;
}

std::vector<std::string> TemplateSet::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::vector<std::string> placeholders(std::string_view tmpl) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (const auto len = placeholder_at(tmpl, i)) {
            std::string name(tmpl.substr(i + 1, len - 2));
            if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
            i += len - 1;
        }
    }
    return names;
}

std::string render_template(std::string_view tmpl, const Variables& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (const auto len = placeholder_at(tmpl, i)) {
            const std::string name(tmpl.substr(i + 1, len - 2));
            auto it = vars.find(name);
            if (it == vars.end())
                throw Error(ErrorCode::TemplateError, "unbound placeholder {" + name + "}");
            out += it->second;
            i += len;
        } else {
            out.push_back(tmpl[i++]);
        }
    }
    return out;
}

TagParse parse_tagged(std::string_view raw, std::string_view tag) {
    const auto text = before_done(raw);
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";

    TagParse result;
    std::size_t pos = 0;
    while (true) {
        const auto start = text.find(open, pos);
        if (start == std::string_view::npos) break;
        const auto body_begin = start + open.size();
        const auto end = text.find(close, body_begin);
        const auto reopen = text.find(open, body_begin);
        if (end == std::string_view::npos) {
            result.unbalanced = true;
            result.warnings.push_back({"unbalanced_tags", "<" + std::string(tag) + "> at byte " +
                                                              std::to_string(start) + " is never closed"});
            break;
        }
        if (reopen != std::string_view::npos && reopen < end) {
            result.warnings.push_back({"orphan_tag", "<" + std::string(tag) + "> at byte " +
                                                         std::to_string(start) + " reopened before close"});
            pos = reopen;
            continue;
        }
        result.spans.push_back({std::string(tag), trim(text.substr(body_begin, end - body_begin)), start});
        pos = end + close.size();
    }
    return result;
}

TagParse parse_tagged(std::string_view raw, const std::vector<std::string>& tags) {
    TagParse merged;
    for (const auto& tag : tags) {
        auto one = parse_tagged(raw, tag);
        merged.unbalanced = merged.unbalanced || one.unbalanced;
        merged.spans.insert(merged.spans.end(), one.spans.begin(), one.spans.end());
        merged.warnings.insert(merged.warnings.end(), one.warnings.begin(), one.warnings.end());
    }
    std::stable_sort(merged.spans.begin(), merged.spans.end(),
                     [](const TaggedSpan& a, const TaggedSpan& b) { return a.offset < b.offset; });
    return merged;
}

std::string parse_labeled_line(std::string_view raw, std::string_view label) {
    const auto want = to_lower_ascii(label) + ":";
    std::size_t pos = 0;
    while (pos < raw.size()) {
        auto nl = raw.find('\n', pos);
        if (nl == std::string_view::npos) nl = raw.size();
        auto line = trim(raw.substr(pos, nl - pos));
        pos = nl + 1;

        // Accept "Label: v", "**Label:** v" and "**Label: v**".
        const auto lead = line.find_first_not_of("*_");
        if (lead == std::string::npos) continue;
        const auto body = std::string_view(line).substr(lead);
        if (body.size() < want.size() || to_lower_ascii(body.substr(0, want.size())) != want) continue;
        return strip_emphasis(body.substr(want.size()));
    }
    throw Error(ErrorCode::LabelMissing, "no line labelled '" + std::string(label) + ":'");
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, TemplateSet templates, GatewayOptions options)
    : backend_(std::move(backend)),
      templates_(std::move(templates)),
      options_(std::move(options)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
    if (!backend_) throw Error(ErrorCode::ConfigError, "gateway requires a backend");
    options_.max_in_flight = std::max<std::size_t>(1, options_.max_in_flight);
}

void Gateway::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) {
    sleeper_ = std::move(sleeper);
}

std::string Gateway::render(const ChatRequest& request) const {
    return render_template(templates_.get(request.template_id), request.variables);
}

std::string Gateway::complete(const ChatRequest& request) const {
    RenderedRequest rendered{request.template_id, render(request), request.variables, request.sampling,
                             options_.model};
    auto delay = options_.retry.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return backend_->send(rendered);
        } catch (const RetryableError& e) {
            if (attempt >= options_.retry.max_retries)
                throw Error(e.code(), std::string(e.what()) + " (after " + std::to_string(attempt) +
                                          " retries)");
            sleeper_(delay);
            delay = std::chrono::milliseconds(
                static_cast<std::int64_t>(static_cast<double>(delay.count()) * options_.retry.multiplier));
        }
    }
}

std::vector<Completion> Gateway::complete_batch(const std::vector<ChatRequest>& requests) const {
    std::vector<Completion> results(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
            try {
                results[i].text = complete(requests[i]);
            } catch (const Error& e) {
                results[i].error = e;
            } catch (const std::exception& e) {
                results[i].error = Error(ErrorCode::Transport, e.what());
            }
        }
    };
    const auto threads = std::min(options_.max_in_flight, requests.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return results;
}

}  // namespace kforge
