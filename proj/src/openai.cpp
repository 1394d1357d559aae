#include "kforge/openai.hpp"

#include <cstdlib>

#include <httplib.h>

namespace kforge {
namespace {

std::string env_or(const char* name, std::string fallback = {}) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint lacks a scheme: " + url);
    const auto slash = url.find('/', scheme + 3);
    SplitUrl out;
    out.origin = url.substr(0, slash);
    out.path = slash == std::string::npos ? "" : url.substr(slash);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
    return out;
}

}  // namespace

EndpointConfig EndpointConfig::from_env(bool judge) {
    EndpointConfig cfg;
    cfg.endpoint = env_or("KF_LLM_ENDPOINT");
    cfg.api_key = env_or("KF_LLM_API_KEY");
    cfg.model = env_or("KF_LLM_MODEL");
    if (judge) cfg.model = env_or("KF_JUDGE_MODEL", cfg.model);
    return cfg;
}

nlohmann::json post_json(const EndpointConfig& cfg, std::string_view route, const nlohmann::json& body) {
    if (cfg.endpoint.empty()) throw Error(ErrorCode::ConfigError, "no endpoint configured (KF_LLM_ENDPOINT)");
    const auto url = split_url(cfg.endpoint);

    httplib::Client client(url.origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(cfg.timeout);
    client.set_write_timeout(cfg.timeout);

    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

    const auto path = url.path + std::string(route);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw RetryableError(ErrorCode::Transport,
                             "POST " + cfg.endpoint + std::string(route) + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500)
        throw RetryableError(ErrorCode::ProtocolStatus, "HTTP " + std::to_string(res->status) + ": " + res->body);
    if (res->status < 200 || res->status >= 300)
        throw Error(ErrorCode::ProtocolStatus, "HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ProtocolStatus, std::string("unparseable response body: ") + e.what());
    }
}

OpenAIBackend::OpenAIBackend(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

nlohmann::json OpenAIBackend::payload(const RenderedRequest& request) const {
    nlohmann::json body = {
        {"model", request.model.empty() ? cfg_.model : request.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.sampling.temperature},
        {"top_p", request.sampling.top_p},
        {"max_tokens", request.sampling.max_tokens},
    };
    if (request.sampling.seed) body["seed"] = *request.sampling.seed;
    return body;
}

std::string OpenAIBackend::send(const RenderedRequest& request) {
    const auto reply = post_json(cfg_, "/chat/completions", payload(request));
    const auto choices = reply.find("choices");
    if (choices == reply.end() || !choices->is_array() || choices->empty())
        throw Error(ErrorCode::ProtocolStatus, "response has no choices");
    const auto& message = (*choices)[0].value("message", nlohmann::json::object());
    const auto content = message.find("content");
    if (content == message.end() || !content->is_string())
        throw Error(ErrorCode::ProtocolStatus, "response choice has no message content");
    return content->get<std::string>();
}

OpenAIEmbedder::OpenAIEmbedder(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

std::vector<std::vector<float>> OpenAIEmbedder::embed(const std::vector<std::string>& texts) {
    const auto reply = post_json(cfg_, "/embeddings", {{"model", cfg_.model}, {"input", texts}});
    const auto data = reply.find("data");
    if (data == reply.end() || !data->is_array() || data->size() != texts.size())
        throw Error(ErrorCode::ProtocolStatus, "embedding response has wrong shape");
    std::vector<std::vector<float>> out(texts.size());
    for (const auto& item : *data) {
        const auto i = item.value("index", std::size_t{0});
        if (i >= out.size()) throw Error(ErrorCode::ProtocolStatus, "embedding index out of range");
        out[i] = item.at("embedding").get<std::vector<float>>();
    }
    return out;
}

}  // namespace kforge
