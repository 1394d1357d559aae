#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <unordered_map>

#include "kforge/llm_gateway.hpp"
#include "kforge/text.hpp"
#include "kforge/util.hpp"

namespace kforge {
namespace {

std::string var(const Variables& vars, const char* name) {
    auto it = vars.find(name);
    return it == vars.end() ? std::string{} : it->second;
}

// Short line without closing punctuation.
bool is_heading(std::string_view line) {
    const auto t = trim(line);
    return !t.empty() && std::string_view(".?!").find(t.back()) == std::string_view::npos && count_tokens(t) <= 12;
}

// Sentences of a document body (heading lines excluded) with at least four tokens.
std::vector<std::string> sentences_of(std::string_view doc) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < doc.size()) {
        auto nl = doc.find('\n', pos);
        if (nl == std::string_view::npos) nl = doc.size();
        auto line = doc.substr(pos, nl - pos);
        pos = nl + 1;
        if (trim(line).empty() || is_heading(line)) continue;
        std::size_t s = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const bool stop = (line[i] == '.' || line[i] == '?' || line[i] == '!') &&
                              (i + 1 == line.size() || line[i + 1] == ' ');
            if (stop || i + 1 == line.size()) {
                auto sentence = trim(line.substr(s, i + 1 - s));
                if (count_tokens(sentence) >= 4) out.push_back(std::move(sentence));
                s = i + 1;
            }
        }
    }
    return out;
}

std::string topic_of(std::string_view sentence) {
    const auto words = tokenize(sentence, {TokenizerMode::Raw});
    std::string topic;
    for (std::size_t i = 0; i < words.size() && i < 6; ++i) {
        if (!topic.empty()) topic.push_back(' ');
        topic += words[i];
    }
    while (!topic.empty() && std::string_view(".,;:!?").find(topic.back()) != std::string_view::npos)
        topic.pop_back();
    return topic;
}

std::string synth_qa(const RenderedRequest& req) {
    const auto doc = var(req.variables, "document");
    auto sentences = sentences_of(doc);
    std::vector<std::size_t> order(sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = Rng::keyed(req.sampling.seed.value_or(0), doc);
    rng.shuffle(order);
    order.resize(std::min<std::size_t>(order.size(), 5));
    std::sort(order.begin(), order.end());

    std::string out;
    for (auto i : order) {
        out += "<question>What does the text say about " + topic_of(sentences[i]) + "?</question>\n";
        out += "<answer>" + sentences[i] + "</answer>\n";
    }
    return out + "</done>";
}

std::string synth_answers(const RenderedRequest& req) {
    const auto sentences = sentences_of(var(req.variables, "document"));
    const auto q = tokenize(var(req.variables, "question"));
    const std::set<std::string> qset(q.begin(), q.end());

    std::vector<std::pair<std::size_t, std::size_t>> scored;  // (overlap, index)
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        const auto toks = tokenize(sentences[i]);
        const std::set<std::string> uniq(toks.begin(), toks.end());
        std::size_t overlap = 0;
        for (const auto& t : uniq) overlap += qset.count(t);
        if (overlap > 0) scored.emplace_back(overlap, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    std::vector<std::string> top;
    for (std::size_t k = 0; k < scored.size() && k < 3; ++k) top.push_back(sentences[scored[k].second]);

    std::vector<std::string> answers;
    if (!top.empty()) {
        answers.push_back(top[0]);
        answers.push_back("In summary, " + top[0]);
    }
    if (top.size() > 1) {
        answers.push_back(top[0] + " " + top[1]);
        answers.push_back("- " + top[0] + "\n- " + top[1]);
        answers.push_back(top[1]);
    }
    if (top.size() > 2) answers.push_back(top[2]);

    std::string out;
    for (const auto& a : answers) out += "<answer>" + a + "</answer>\n";
    return out + "</done>";
}

std::string synth_judge(const RenderedRequest& req) {
    const auto gold = tokenize(var(req.variables, "gold_response"));
    const auto pred = tokenize(var(req.variables, "predicted_response"));
    std::unordered_map<std::string, int> counts;
    for (const auto& t : pred) ++counts[t];
    std::size_t hit = 0;
    for (const auto& t : gold) {
        if (auto it = counts.find(t); it != counts.end() && it->second > 0) {
            --it->second;
            ++hit;
        }
    }
    const double recall = gold.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(gold.size());
    char buf[96];
    std::snprintf(buf, sizeof buf, "The prediction recovers %.2f of the ground-truth tokens.", recall);
    return std::string("<explanation>") + buf + "</explanation>\n<score>" + (recall >= 0.5 ? "1" : "0") +
           "</score>";
}

std::string synth_filter(const RenderedRequest& req) {
    static constexpr std::array<std::string_view, 7> kContextual = {
        "based on given example", "mentioned in the chapter", "mentioned in the passage",
        "given in the document",  "in the above passage",     "in the given context",
        "based on the given example",
    };
    const auto q = to_lower_ascii(var(req.variables, "question"));
    const bool contextual = std::any_of(kContextual.begin(), kContextual.end(),
                                        [&](std::string_view p) { return q.find(p) != std::string::npos; });
    if (contextual)
        return "The question refers to material outside its own text.\nScoring: Incomplete";
    return "The question is self-contained.\nScoring: Complete";
}

}  // namespace

std::string synthesize_mock_response(const RenderedRequest& req) {
    if (req.template_id == template_id::kQaGeneration) return synth_qa(req);
    if (req.template_id == template_id::kMultipleAnswers) return synth_answers(req);
    if (req.template_id == template_id::kJudge) return synth_judge(req);
    if (req.template_id == template_id::kTestFilter) return synth_filter(req);
    if (req.template_id == template_id::kReplay) return var(req.variables, "input");
    return req.prompt;
}

MockBackend::MockBackend(std::filesystem::path fixture_dir) : dir_(std::move(fixture_dir)) {}

std::string MockBackend::fixture_key(std::string_view template_id, const Variables& vars) {
    std::string material(template_id);
    material.push_back('\0');
    for (const auto& [k, v] : vars) {
        material += k;
        material.push_back('\0');
        material += v;
        material.push_back('\0');
    }
    return sha256_hex(material).substr(0, 16);
}

std::string MockBackend::send(const RenderedRequest& request) {
    if (!dir_.empty()) {
        const auto base = dir_ / request.template_id;
        const auto key = fixture_key(request.template_id, request.variables);
        std::vector<std::filesystem::path> candidates;
        if (request.sampling.seed)
            candidates.push_back(base / (key + ".s" + std::to_string(*request.sampling.seed) + ".txt"));
        candidates.push_back(base / (key + ".txt"));
        candidates.push_back(base / "default.txt");
        for (const auto& path : candidates)
            if (std::filesystem::is_regular_file(path)) return read_file(path);
    }
    return synthesize_mock_response(request);
}

}  // namespace kforge
