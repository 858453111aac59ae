#pragma once

// OpenAI-compatible chat-completion client: one candidate per (record,
// endpoint), deterministic generation settings, bounded retries with
// exponential backoff, and per-endpoint in-flight caps.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "persodpo/core.hpp"
#include "persodpo/prompt.hpp"

namespace persodpo {

class TransportError : public std::runtime_error {
public:
    TransportError(const EndpointSpec& ep, int attempts, const std::string& last)
        : std::runtime_error("endpoint " + ep.model_id + " (" + ep.base_url + ") failed after " +
                             std::to_string(attempts) + " attempt(s): " + last) {}
};

struct GenerateResult {
    CandidateResponse candidate;
    int attempts = 1;
};

namespace detail {

inline std::string bearer_token(const EndpointSpec& ep) {
    if (ep.auth_env_var.empty()) return "";
    const char* v = std::getenv(ep.auth_env_var.c_str());
    if (!v) throw CoreError("auth environment variable not set: " + ep.auth_env_var);
    return v;
}

inline json chat_request_body(const std::string& prompt, const std::string& model_id,
                              const GenerationConfig& gen) {
    return json{{"model", model_id},
                {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                {"temperature", gen.temperature},
                {"max_tokens", gen.max_tokens}};
}

}  // namespace detail

// Single request with bounded retries. Backoff doubles per attempt with
// up to 25% jitter, so delays are non-decreasing.
inline GenerateResult generate(const std::string& prompt, const EndpointSpec& endpoint,
                               const GenerationConfig& gen) {
    if (gen.temperature < 0) throw CoreError("temperature must be >= 0");
    if (gen.max_tokens <= 0) throw CoreError("max_tokens must be > 0");
    std::string token = detail::bearer_token(endpoint);

    httplib::Client cli(endpoint.base_url);
    cli.set_connection_timeout(0, endpoint.request_timeout_ms * 1000LL);
    cli.set_read_timeout(0, endpoint.request_timeout_ms * 1000LL);
    if (!token.empty()) cli.set_bearer_token_auth(token);

    std::string body = detail::chat_request_body(prompt, endpoint.model_id, gen).dump();
    std::string last_error = "no attempt made";
    std::mt19937_64 jitter_rng(std::hash<std::string>{}(endpoint.model_id + prompt));

    for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        if (attempt > 0) {
            double base = endpoint.backoff_base_ms * static_cast<double>(1 << (attempt - 1));
            std::uniform_real_distribution<double> jitter(0.0, 0.25 * base);
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long>(base + jitter(jitter_rng))));
        }
        auto t0 = std::chrono::steady_clock::now();
        auto res = cli.Post("/v1/chat/completions", body, "application/json");
        auto t1 = std::chrono::steady_clock::now();
        if (!res) {
            last_error = "transport: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty()) {
            last_error = "unparseable response body";
            continue;
        }
        GenerateResult out;
        out.candidate.model_id = endpoint.model_id;
        out.candidate.raw_output =
            parsed["choices"][0].at("message").at("content").get<std::string>();
        out.candidate.latency_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
        out.attempts = attempt + 1;
        return out;
    }
    throw TransportError(endpoint, endpoint.max_retries + 1, last_error);
}

// Fan-out over records x endpoints. Per-item failures become failed
// candidates (empty raw_output, reason recorded); the batch never aborts.
// Output order is (record order) x (endpoint order) regardless of
// completion order.
inline std::vector<CandidateResponse> generate_all(const std::vector<DialogueRecord>& records,
                                                   const std::vector<EndpointSpec>& endpoints,
                                                   const PromptTemplate& tmpl,
                                                   const GenerationConfig& gen,
                                                   int length_budget = 110) {
    if (records.empty()) throw CoreError("generate_all requires at least one record");
    if (endpoints.empty()) throw CoreError("generate_all requires at least one endpoint");

    std::vector<std::string> prompts;
    prompts.reserve(records.size());
    for (const auto& r : records) prompts.push_back(build_prompt(r, tmpl, length_budget));

    std::vector<CandidateResponse> out(records.size() * endpoints.size());
    int cap = std::max(1, gen.parallelism);

    // One worker pool per endpoint enforces the per-endpoint in-flight cap.
    std::vector<std::thread> workers;
    for (std::size_t e = 0; e < endpoints.size(); ++e) {
        auto next = std::make_shared<std::atomic<std::size_t>>(0);
        int pool = std::min<std::size_t>(cap, records.size());
        for (int w = 0; w < pool; ++w) {
            workers.emplace_back([&, e, next] {
                for (std::size_t r = (*next)++; r < records.size(); r = (*next)++) {
                    std::size_t slot = r * endpoints.size() + e;
                    try {
                        GenerateResult res = generate(prompts[r], endpoints[e], gen);
                        out[slot] = std::move(res.candidate);
                    } catch (const std::exception& ex) {
                        out[slot].model_id = endpoints[e].model_id;
                        out[slot].failure = ex.what();
                    }
                    out[slot].record_id = records[r].id;
                }
            });
        }
    }
    for (auto& t : workers) t.join();
    return out;
}

}  // namespace persodpo
