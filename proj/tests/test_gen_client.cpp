#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>

#include "persodpo/gen_client.hpp"
#include "support/mock_openai.hpp"

using namespace persodpo;

namespace {

EndpointSpec endpoint(const std::string& url, const std::string& model = "mock-model") {
    EndpointSpec ep;
    ep.model_id = model;
    ep.base_url = url;
    ep.max_retries = 3;
    ep.backoff_base_ms = 1;
    return ep;
}

DialogueRecord record(const std::string& id) {
    DialogueRecord r;
    r.id = id;
    r.persona = {"I like tests."};
    r.utterances = {{Speaker::human, "Say hello."}};
    return r;
}

}  // namespace

TEST_CASE("raw_output is the endpoint content verbatim") {
    testing::MockOpenAIServer server([](const json&) { return std::make_pair(200, "hello"); });
    auto res = generate("prompt", endpoint(server.base_url()), GenerationConfig{});
    CHECK(res.candidate.raw_output == "hello");
    CHECK(res.candidate.latency_ms >= 0);
    CHECK(res.attempts == 1);
    CHECK_FALSE(res.candidate.parsed_response.has_value());
    CHECK_FALSE(res.candidate.format_valid);
}

TEST_CASE("429 twice then 200 succeeds with three attempts") {
    std::atomic<int> calls{0};
    testing::MockOpenAIServer server([&](const json&) {
        return ++calls <= 2 ? std::make_pair(429, std::string())
                            : std::make_pair(200, std::string("ok"));
    });
    auto res = generate("prompt", endpoint(server.base_url()), GenerationConfig{});
    CHECK(res.attempts == 3);
    CHECK(res.candidate.raw_output == "ok");
}

TEST_CASE("request body carries the configured model, temperature and max_tokens") {
    json seen;
    testing::MockOpenAIServer server([&](const json& body) {
        seen = body;
        return std::make_pair(200, std::string("x"));
    });
    generate("the prompt", endpoint(server.base_url(), "m-7b"), GenerationConfig{});
    CHECK(seen.at("model") == "m-7b");
    CHECK(seen.at("temperature") == 0.0);
    CHECK(seen.at("max_tokens") == 110);
    REQUIRE(seen.at("messages").size() == 1);
    CHECK(seen["messages"][0].at("role") == "user");
    CHECK(seen["messages"][0].at("content") == "the prompt");
}

TEST_CASE("exhausted retries raise a transport error with attempt count") {
    testing::MockOpenAIServer server([](const json&) { return std::make_pair(500, std::string()); });
    auto ep = endpoint(server.base_url());
    ep.max_retries = 2;
    CHECK_THROWS_WITH(generate("p", ep, GenerationConfig{}),
                      Catch::Matchers::ContainsSubstring("3 attempt") &&
                          Catch::Matchers::ContainsSubstring("status 500"));
    CHECK(server.request_count() == 3);
}

TEST_CASE("missing auth variable fails before any network call") {
    testing::MockOpenAIServer server([](const json&) { return std::make_pair(200, std::string()); });
    auto ep = endpoint(server.base_url());
    ep.auth_env_var = "PERSODPO_TEST_TOKEN_THAT_DOES_NOT_EXIST";
    CHECK_THROWS_AS(generate("p", ep, GenerationConfig{}), CoreError);
    CHECK(server.request_count() == 0);
}

TEST_CASE("bearer token from the environment reaches the server") {
    setenv("PERSODPO_TEST_TOKEN", "sekrit", 1);
    std::string auth_header;
    httplib::Server raw;
    raw.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth_header = req.get_header_value("Authorization");
        json reply{{"choices", {{{"message", {{"content", "y"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    int port = raw.bind_to_any_port("127.0.0.1");
    std::thread t([&] { raw.listen_after_bind(); });
    raw.wait_until_ready();

    auto ep = endpoint("http://127.0.0.1:" + std::to_string(port));
    ep.auth_env_var = "PERSODPO_TEST_TOKEN";
    generate("p", ep, GenerationConfig{});
    raw.stop();
    t.join();
    CHECK(auth_header == "Bearer sekrit");
}

TEST_CASE("generate_all returns records x endpoints in deterministic order") {
    testing::MockOpenAIServer server([](const json& body) {
        auto model = body.at("model").get<std::string>();
        return std::make_pair(200, "reply from " + model);
    });
    std::vector<DialogueRecord> records{record("r1"), record("r2")};
    std::vector<EndpointSpec> endpoints{endpoint(server.base_url(), "e1"),
                                        endpoint(server.base_url(), "e2"),
                                        endpoint(server.base_url(), "e3")};
    auto out = generate_all(records, endpoints, PromptTemplate{}, GenerationConfig{});
    REQUIRE(out.size() == 6);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t e = 0; e < 3; ++e) {
            const auto& c = out[r * 3 + e];
            CHECK(c.record_id == records[r].id);
            CHECK(c.model_id == endpoints[e].model_id);
            CHECK(c.raw_output == "reply from " + endpoints[e].model_id);
        }
    }
}

TEST_CASE("a failing endpoint does not disturb the others") {
    testing::MockOpenAIServer server([](const json& body) {
        if (body.at("model") == "broken") return std::make_pair(500, std::string());
        return std::make_pair(200, std::string("fine"));
    });
    std::vector<EndpointSpec> endpoints{endpoint(server.base_url(), "good"),
                                        endpoint(server.base_url(), "broken")};
    endpoints[1].max_retries = 0;
    auto out = generate_all({record("r1")}, endpoints, PromptTemplate{}, GenerationConfig{});
    REQUIRE(out.size() == 2);
    CHECK(out[0].raw_output == "fine");
    CHECK(out[0].failure.empty());
    CHECK(out[1].raw_output.empty());
    CHECK_FALSE(out[1].failure.empty());
    CHECK(out[1].record_id == "r1");
    CHECK(out[1].model_id == "broken");
}

TEST_CASE("generate_all output is byte-identical across runs of a deterministic mock") {
    testing::MockOpenAIServer server([](const json& body) {
        auto prompt = body.at("messages").at(0).at("content").get<std::string>();
        return std::make_pair(200, "echo:" + std::to_string(std::hash<std::string>{}(prompt) % 997));
    });
    std::vector<DialogueRecord> records{record("r1"), record("r2"), record("r3")};
    std::vector<EndpointSpec> endpoints{endpoint(server.base_url(), "e1"),
                                        endpoint(server.base_url(), "e2")};
    auto run = [&] {
        auto out = generate_all(records, endpoints, PromptTemplate{}, GenerationConfig{});
        std::string bytes;
        for (auto& c : out) {
            c.latency_ms = 0;  // wall clock varies; content must not
            bytes += to_json(c).dump() + "\n";
        }
        return bytes;
    };
    CHECK(run() == run());
}

TEST_CASE("empty inputs are rejected") {
    CHECK_THROWS_AS(generate_all({}, {endpoint("http://x")}, PromptTemplate{}, GenerationConfig{}),
                    CoreError);
    CHECK_THROWS_AS(generate_all({record("r")}, {}, PromptTemplate{}, GenerationConfig{}),
                    CoreError);
}
