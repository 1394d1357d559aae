#include "helpers.hpp"

#include <thread>

#include <httplib.h>

#include "kforge/llm_gateway.hpp"
#include "kforge/openai.hpp"

using namespace kforge;
using namespace std::chrono_literals;

namespace {

std::vector<std::string> bodies(const TagParse& p) {
    std::vector<std::string> out;
    for (const auto& s : p.spans) out.push_back(s.body);
    return out;
}

}  // namespace

TEST_CASE("builtin templates match the shipped files byte for byte") {
    const auto set = TemplateSet::builtin();
    for (const char* id : {"qa_generation", "multiple_answers", "rag_finetune", "dsf_finetune", "judge", "test_filter",
                           "replay"}) {
        CAPTURE(id);
        REQUIRE(set.contains(id));
        CHECK(set.get(id) == read_file(kt::source_dir() / "templates" / (std::string(id) + ".txt")));
    }
    CHECK(kt::error_code_of([&] { set.get("nope"); }) == ErrorCode::TemplateError);
}

TEST_CASE("template placeholders") {
    const auto set = TemplateSet::builtin();
    const auto rag = placeholders(set.get("rag_finetune"));
    for (const char* name : {"document_0", "document_1", "document_2", "document_3", "document_4", "data_identifier",
                             "question"})
        CHECK(std::find(rag.begin(), rag.end(), name) != rag.end());
    CHECK(placeholders(set.get("judge")) == std::vector<std::string>{"question", "gold_response", "predicted_response"});
    CHECK(placeholders(set.get("dsf_finetune")) == std::vector<std::string>{"question"});
    CHECK(placeholders(set.get("test_filter")) == std::vector<std::string>{"question"});
    const auto& rag_text = set.get("rag_finetune");
    CHECK(rag_text.find("Enclosed within <passage> tags, you will find various excerpts") != std::string::npos);
    CHECK(set.get("dsf_finetune").find("<passage") == std::string::npos);
    CHECK(set.get("test_filter").find("based on given example") != std::string::npos);
    CHECK(set.get("judge").find("generate \"1\" if the Prediction is correct in the light of Ground-truth") !=
          std::string::npos);
}

TEST_CASE("template overrides from a directory") {
    kt::TempDir dir;
    write_file(dir / "judge.txt", "J {question}");
    const auto set = TemplateSet::with_overrides(dir.path());
    CHECK(set.get("judge") == "J {question}");
    CHECK(set.get("dsf_finetune") == TemplateSet::builtin().get("dsf_finetune"));
}

TEST_CASE("render_template binds every placeholder in one pass") {
    CHECK(render_template("Q: {question}!", {{"question", "why {answer}"}}) == "Q: why {answer}!");
    CHECK(kt::error_code_of([] { render_template("Q: {question}", {}); }) == ErrorCode::TemplateError);
    CHECK(render_template("json {\"a\": 1}", {}) == "json {\"a\": 1}");
}

TEST_CASE("parse_tagged examples") {
    CHECK(bodies(parse_tagged("<answer>A</answer><answer>B</answer></done>garbage", "answer")) ==
          std::vector<std::string>{"A", "B"});
    CHECK(bodies(parse_tagged("<answer>A</answer></done><answer>B</answer>", "answer")) ==
          std::vector<std::string>{"A"});
    CHECK(bodies(parse_tagged("<question>Q1</question><answer>A1</answer>", "question")) ==
          std::vector<std::string>{"Q1"});
    const auto dangling = parse_tagged("<answer>A", "answer");
    CHECK(dangling.spans.empty());
    CHECK(dangling.unbalanced);
    REQUIRE(dangling.warnings.size() == 1);
    CHECK(dangling.warnings[0].code == "unbalanced_tags");
    const auto partial = parse_tagged("<answer>A</answer><answer>B", "answer");
    CHECK(bodies(partial) == std::vector<std::string>{"A"});
    CHECK(partial.unbalanced);
}

TEST_CASE("parse_tagged inverts wrapping of tag-free strings") {
    Rng rng(3);
    const std::string alphabet = "abc XYZ\n.,<>/=\"'";
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> items;
        std::string raw;
        const auto k = rng.below(6);
        for (std::size_t i = 0; i < k; ++i) {
            std::string s;
            const auto len = rng.below(12);
            for (std::size_t j = 0; j < len; ++j) s += alphabet[rng.below(alphabet.size())];
            s = trim(s);
            if (s.find("<t>") != std::string::npos || s.find("</t>") != std::string::npos) continue;
            items.push_back(s);
            raw += "<t>" + s + "</t>";
            if (rng.below(2)) raw += " filler ";
        }
        CHECK(bodies(parse_tagged(raw, "t")) == items);
    }
}

TEST_CASE("parse_labeled_line") {
    CHECK(parse_labeled_line("Evaluation: ok\nScoring: Complete", "Scoring") == "Complete");
    CHECK(parse_labeled_line("scoring:  Incomplete ", "Scoring") == "Incomplete");
    CHECK(parse_labeled_line("**Scoring:** Complete", "Scoring") == "Complete");
    CHECK(kt::error_code_of([] { parse_labeled_line("Evaluation: fine", "Scoring"); }) == ErrorCode::LabelMissing);
}

TEST_CASE("gateway retries retryable failures with exponential backoff") {
    auto backend = kt::scripted([](const RenderedRequest&, int call) -> std::string {
        if (call < 2) throw RetryableError(ErrorCode::Transport, "down");
        return "ok";
    });
    Gateway gw(backend, TemplateSet::builtin());
    std::vector<long> delays;
    gw.set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(static_cast<long>(d.count())); });
    CHECK(gw.complete({"replay", {{"input", "x"}}, {}}) == "ok");
    CHECK(backend->calls == 3);
    CHECK(delays == std::vector<long>{500, 1000});
}

TEST_CASE("gateway gives up after the retry budget") {
    auto backend = kt::scripted([](const RenderedRequest&, int) -> std::string {
        throw RetryableError(ErrorCode::Transport, "down");
    });
    auto gw = kt::gateway_for(backend);
    CHECK(kt::error_code_of([&] { gw.complete({"replay", {{"input", "x"}}, {}}); }) == ErrorCode::Transport);
    CHECK(backend->calls == 4);

    auto fatal = kt::scripted([](const RenderedRequest&, int) -> std::string {
        throw Error(ErrorCode::ProtocolStatus, "400");
    });
    auto gw2 = kt::gateway_for(fatal);
    CHECK(kt::error_code_of([&] { gw2.complete({"replay", {{"input", "x"}}, {}}); }) == ErrorCode::ProtocolStatus);
    CHECK(fatal->calls == 1);
    CHECK(kt::error_code_of([&] { gw2.complete({"judge", {{"question", "q"}}, {}}); }) == ErrorCode::TemplateError);
    CHECK(fatal->calls == 1);
}

TEST_CASE("batch results are keyed by request index") {
    auto backend = kt::scripted([](const RenderedRequest& r, int) -> std::string {
        const auto& in = r.variables.at("input");
        std::this_thread::sleep_for(std::chrono::milliseconds((std::hash<std::string>{}(in) % 7)));
        if (in == "13") throw Error(ErrorCode::ProtocolStatus, "bad item");
        return "echo " + in;
    });
    auto gw = kt::gateway_for(backend, 6);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 40; ++i) reqs.push_back({"replay", {{"input", std::to_string(i)}}, {}});
    const auto out = gw.complete_batch(reqs);
    REQUIRE(out.size() == 40);
    for (int i = 0; i < 40; ++i) {
        if (i == 13) {
            CHECK_FALSE(out[i].ok());
            CHECK(out[i].error->code() == ErrorCode::ProtocolStatus);
        } else {
            CHECK(out[i].text == "echo " + std::to_string(i));
        }
    }
}

TEST_CASE("mock backend is deterministic and reads fixtures in order") {
    auto gw = kt::mock_gateway();
    ChatRequest req{"qa_generation", {{"document", "Title\nThe pool holds four disks today. Volumes live in pools now."}},
                    {}};
    req.sampling.seed = 7;
    const auto a = gw.complete(req);
    CHECK(a == gw.complete(req));
    CHECK(parse_tagged(a, "question").spans.size() == 2);

    kt::TempDir dir;
    const Variables vars{{"question", "Q"}, {"gold_response", "G"}, {"predicted_response", "P"}};
    const auto key = MockBackend::fixture_key("judge", vars);
    CHECK(key.size() == 16);
    write_file(dir / "judge/default.txt", "default");
    auto fx = kt::gateway_for(std::make_shared<MockBackend>(dir.path()));
    ChatRequest jr{"judge", vars, {}};
    jr.sampling.seed = 3;
    CHECK(fx.complete(jr) == "default");
    write_file(dir / ("judge/" + key + ".txt"), "keyed");
    CHECK(fx.complete(jr) == "keyed");
    write_file(dir / ("judge/" + key + ".s3.txt"), "seeded");
    CHECK(fx.complete(jr) == "seeded");
    jr.sampling.seed = 4;
    CHECK(fx.complete(jr) == "keyed");
}

TEST_CASE("openai payload shape") {
    OpenAIBackend b({"http://localhost:1/v1", "k", "model-a"});
    RenderedRequest r{"judge", "hello", {}, {}, ""};
    r.sampling.seed = 9;
    const auto p = b.payload(r);
    CHECK(p["model"] == "model-a");
    CHECK(p["messages"][0]["role"] == "user");
    CHECK(p["messages"][0]["content"] == "hello");
    CHECK(p["temperature"] == doctest::Approx(0.7));
    CHECK(p["top_p"] == doctest::Approx(0.95));
    CHECK(p["max_tokens"] == 2048);
    CHECK(p["seed"] == 9);
}

TEST_CASE("unreachable endpoint fails with Transport after retries") {
    EndpointConfig cfg{"http://127.0.0.1:1/v1", "", "m", std::chrono::seconds(2)};
    auto backend = std::make_shared<OpenAIBackend>(cfg);
    auto gw = kt::gateway_for(backend);
    CHECK(kt::error_code_of([&] { gw.complete({"replay", {{"input", "x"}}, {}}); }) == ErrorCode::Transport);
    CHECK(kt::error_code_of([] { post_json({}, "/chat/completions", {}); }) == ErrorCode::ConfigError);
}

TEST_CASE("openai client against a local server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const auto n = hits++;
        const auto body = nlohmann::json::parse(req.body);
        if (body["messages"][0]["content"] == "rate" && n == 0) {
            res.status = 429;
            return;
        }
        if (body["messages"][0]["content"] == "bad") {
            res.status = 400;
            res.set_content("nope", "text/plain");
            return;
        }
        CHECK(req.get_header_value("Authorization") == "Bearer secret");
        nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "hi there"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i)
            data.push_back({{"index", i}, {"embedding", {double(i), 1.0}}});
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    EndpointConfig cfg{"http://127.0.0.1:" + std::to_string(port) + "/v1", "secret", "m"};
    auto gw = kt::gateway_for(std::make_shared<OpenAIBackend>(cfg));
    CHECK(gw.complete({"replay", {{"input", "hello"}}, {}}) == "hi there");
    hits = 0;
    CHECK(gw.complete({"replay", {{"input", "rate"}}, {}}) == "hi there");
    CHECK(hits == 2);
    hits = 0;
    CHECK(kt::error_code_of([&] { gw.complete({"replay", {{"input", "bad"}}, {}}); }) == ErrorCode::ProtocolStatus);
    CHECK(hits == 1);

    OpenAIEmbedder emb(cfg);
    const auto v = emb.embed({"a", "b", "c"});
    REQUIRE(v.size() == 3);
    CHECK(v[2][0] == doctest::Approx(2.0));

    server.stop();
    th.join();
}
