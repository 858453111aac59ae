#pragma once

// Metric hub: obtains the four metric-based scores (C, P, UE,
// Coh-UniEval) per candidate through pluggable adapters and aggregates
// them with the LFC signal into a ScoreVector. The neural evaluators
// themselves are external; this module consumes their verdicts.

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>

#include "persodpo/core.hpp"
#include "persodpo/lfc.hpp"
#include "persodpo/prompt.hpp"

namespace persodpo {

enum class MetricId { c, p, ue, coh_unieval };

inline std::string to_string(MetricId m) {
    switch (m) {
        case MetricId::c: return "c";
        case MetricId::p: return "p";
        case MetricId::ue: return "ue";
        case MetricId::coh_unieval: return "coh_unieval";
    }
    return "c";
}

inline MetricId metric_from_string(const std::string& s) {
    if (s == "c") return MetricId::c;
    if (s == "p") return MetricId::p;
    if (s == "ue") return MetricId::ue;
    if (s == "coh_unieval") return MetricId::coh_unieval;
    throw CoreError("unknown metric id: " + s);
}

enum class AdapterKind { precomputed_file, judge_endpoint };

struct EvaluatorAdapter {
    MetricId metric_id = MetricId::c;
    AdapterKind kind = AdapterKind::precomputed_file;
    std::string source;  // file path or endpoint base url
    std::string auth_env_var;
    std::string rubric_path;  // judge_endpoint only
    double scale = 1.0;       // affine normalization: scale*raw + offset
    double offset = 0.0;
};

enum class Strictness { strict, lenient };

struct RawMetricScores {
    std::optional<double> c, p, ue, coh_unieval;

    bool complete() const { return c && p && ue && coh_unieval; }

    std::optional<double>& slot(MetricId m) {
        switch (m) {
            case MetricId::c: return c;
            case MetricId::p: return p;
            case MetricId::ue: return ue;
            case MetricId::coh_unieval: return coh_unieval;
        }
        return c;
    }
};

using CandidateKey = std::pair<std::string, std::string>;  // (record_id, model_id)
using ScoreMap = std::map<CandidateKey, RawMetricScores>;

namespace detail {

// Precomputed score file: one line per (record_id, model_id) holding the
// raw value for this adapter's metric under its metric id key.
inline std::map<CandidateKey, double> load_precomputed(const EvaluatorAdapter& a) {
    std::map<CandidateKey, double> out;
    std::string key = to_string(a.metric_id);
    for (const auto& j : read_jsonl(a.source)) {
        if (!j.contains(key)) continue;
        out[{j.at("record_id").get<std::string>(), j.at("model_id").get<std::string>()}] =
            j.at(key).get<double>();
    }
    return out;
}

// Strict verdict extractor: the judge reply must contain exactly one number.
inline double parse_verdict(const std::string& content) {
    std::size_t pos = content.find_first_of("+-0123456789");
    if (pos == std::string::npos) throw CoreError("judge verdict contains no number: " + content);
    std::size_t consumed = 0;
    double v = std::stod(content.substr(pos), &consumed);
    std::string rest = trim(content.substr(pos + consumed));
    if (rest.find_first_of("0123456789") != std::string::npos)
        throw CoreError("judge verdict is not a single number: " + content);
    return v;
}

}  // namespace detail

// Sends one rubric prompt per candidate to an OpenAI-compatible judge
// endpoint and parses a single numeric verdict from the reply.
inline double judge_score(const EvaluatorAdapter& adapter, const std::string& rubric_path,
                          const std::string& response_text) {
    std::ifstream rf(rubric_path);
    if (!rf) throw CoreError("cannot open rubric file: " + rubric_path);
    std::stringstream rs;
    rs << rf.rdbuf();
    std::string prompt = replace_all(rs.str(), "{response}", response_text);

    httplib::Client cli(adapter.source);
    if (!adapter.auth_env_var.empty()) {
        const char* tok = std::getenv(adapter.auth_env_var.c_str());
        if (!tok) throw CoreError("auth environment variable not set: " + adapter.auth_env_var);
        cli.set_bearer_token_auth(tok);
    }
    json body{{"model", "judge-" + to_string(adapter.metric_id)},
              {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
              {"temperature", 0.0},
              {"max_tokens", 16}};
    auto res = cli.Post("/v1/chat/completions", body.dump(), "application/json");
    if (!res || res->status != 200)
        throw CoreError("judge endpoint error: " +
                        (res ? "status " + std::to_string(res->status)
                             : httplib::to_string(res.error())));
    json parsed = json::parse(res->body);
    return detail::parse_verdict(
        parsed.at("choices").at(0).at("message").at("content").get<std::string>());
}

inline ScoreMap fetch_scores(const std::vector<CandidateResponse>& candidates,
                             const std::vector<EvaluatorAdapter>& adapters,
                             Strictness strictness) {
    bool have[4] = {false, false, false, false};
    for (const auto& a : adapters) {
        if (have[static_cast<int>(a.metric_id)])
            throw CoreError("duplicate adapter for metric " + to_string(a.metric_id));
        have[static_cast<int>(a.metric_id)] = true;
    }
    for (int i = 0; i < 4; ++i)
        if (!have[i]) throw CoreError("missing adapter for metric " +
                                      to_string(static_cast<MetricId>(i)));

    ScoreMap out;
    for (const auto& c : candidates) out[{c.record_id, c.model_id}] = {};

    for (const auto& a : adapters) {
        if (a.kind == AdapterKind::precomputed_file) {
            auto table = detail::load_precomputed(a);
            for (const auto& c : candidates) {
                CandidateKey key{c.record_id, c.model_id};
                auto it = table.find(key);
                if (it == table.end()) {
                    if (strictness == Strictness::strict)
                        throw CoreError("missing " + to_string(a.metric_id) + " score for (" +
                                        c.record_id + ", " + c.model_id + ")");
                    continue;
                }
                out[key].slot(a.metric_id) = a.scale * it->second + a.offset;
            }
        } else {
            for (const auto& c : candidates) {
                CandidateKey key{c.record_id, c.model_id};
                try {
                    double raw = judge_score(a, a.rubric_path,
                                             c.parsed_response.value_or(c.raw_output));
                    out[key].slot(a.metric_id) = a.scale * raw + a.offset;
                } catch (const std::exception& e) {
                    if (strictness == Strictness::strict)
                        throw CoreError("judge fetch failed for (" + c.record_id + ", " +
                                        c.model_id + ", " + to_string(a.metric_id) +
                                        "): " + e.what());
                }
            }
        }
    }
    return out;
}

inline ScoreVector aggregate(const RawMetricScores& raw, const LfcResult& lfc,
                             const LfcConfig& cfg) {
    if (!raw.complete()) {
        std::string missing;
        for (MetricId m : {MetricId::c, MetricId::p, MetricId::ue, MetricId::coh_unieval}) {
            RawMetricScores copy = raw;
            if (!copy.slot(m)) missing += (missing.empty() ? "" : ", ") + to_string(m);
        }
        throw CoreError("cannot aggregate, missing metric score(s): " + missing);
    }
    return ScoreVector::make(*raw.c, *raw.p, *raw.ue, *raw.coh_unieval, lfc.s_length,
                             lfc.s_format, cfg.w1, cfg.w2);
}

}  // namespace persodpo
