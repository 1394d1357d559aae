#pragma once

#include <chrono>
#include <string>

#include <nlohmann/json.hpp>

#include "kforge/llm_gateway.hpp"
#include "kforge/retriever.hpp"

namespace kforge {

/// Connection settings for an OpenAI-compatible server, e.g. endpoint
/// "http://localhost:8000/v1". Requests go to `<endpoint>/chat/completions` and
/// `<endpoint>/embeddings`.
struct EndpointConfig {
    std::string endpoint;
    std::string api_key;
    std::string model;
    std::chrono::seconds timeout{120};

    /// Reads KF_LLM_ENDPOINT, KF_LLM_API_KEY and KF_LLM_MODEL. With `judge`,
    /// KF_JUDGE_MODEL takes precedence over KF_LLM_MODEL.
    static EndpointConfig from_env(bool judge = false);
};

/// POSTs JSON and returns the parsed reply. Connection failures and 429/5xx
/// raise RetryableError; other non-2xx statuses and unparseable bodies raise
/// ProtocolStatus.
nlohmann::json post_json(const EndpointConfig& cfg, std::string_view route, const nlohmann::json& body);

class OpenAIBackend : public ChatBackend {
public:
    explicit OpenAIBackend(EndpointConfig cfg);

    std::string send(const RenderedRequest& request) override;

    /// Request body for a rendered prompt (exposed for tests).
    nlohmann::json payload(const RenderedRequest& request) const;

private:
    EndpointConfig cfg_;
};

class OpenAIEmbedder : public Embedder {
public:
    explicit OpenAIEmbedder(EndpointConfig cfg);
    std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;

private:
    EndpointConfig cfg_;
};

}  // namespace kforge
