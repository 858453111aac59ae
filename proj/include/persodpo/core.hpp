#pragma once

// Shared data model and line-delimited JSON serialization for the
// PersoDPO pipeline. All types are immutable value types; every
// ScoreVector goes through ScoreVector::make so the arithmetic
// identities hold by construction.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace persodpo {

using json = nlohmann::json;

class CoreError : public std::runtime_error {
public:
    explicit CoreError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

enum class Speaker { human, bot };

inline std::string to_string(Speaker s) {
    return s == Speaker::human ? "human" : "bot";
}

inline Speaker speaker_from_string(const std::string& s) {
    if (s == "human") return Speaker::human;
    if (s == "bot") return Speaker::bot;
    throw CoreError("unknown speaker: " + s);
}

struct Utterance {
    Speaker speaker;
    std::string text;

    bool operator==(const Utterance&) const = default;
};

struct DialogueRecord {
    std::string id;
    std::vector<std::string> persona;
    std::vector<Utterance> utterances;
    std::optional<std::string> gold_response;

    bool operator==(const DialogueRecord&) const = default;

    // Throws CoreError naming the violated invariant.
    void validate() const {
        if (persona.empty()) throw CoreError("persona list empty");
        if (utterances.empty()) throw CoreError("utterances list empty");
        if (utterances.back().speaker != Speaker::human)
            throw CoreError("last utterance speaker must be human");
        for (const auto& p : persona)
            if (trim(p).empty()) throw CoreError("empty persona sentence");
        for (const auto& u : utterances)
            if (trim(u.text).empty()) throw CoreError("empty utterance text");
        if (gold_response && trim(*gold_response).empty())
            throw CoreError("empty gold_response");
    }
};

struct CandidateResponse {
    std::string record_id;
    std::string model_id;
    std::string raw_output;
    std::optional<std::string> parsed_response;
    bool format_valid = false;
    std::int64_t latency_ms = 0;
    std::int64_t token_count = 0;
    std::string failure = "";  // empty unless generation failed

    bool operator==(const CandidateResponse&) const = default;

    void validate() const {
        if (parsed_response.has_value() != format_valid)
            throw CoreError("parsed_response present iff format_valid");
        if (latency_ms < 0) throw CoreError("latency_ms negative");
        if (token_count < 0) throw CoreError("token_count negative");
    }
};

struct ScoreVector {
    double c_score = 0, p_score = 0, ue_score = 0, coh_unieval = 0;
    double s_length = 0, s_format = 0;
    double s_metric = 0, s_lfc = 0, s_total = 0;

    bool operator==(const ScoreVector&) const = default;

    // Single constructor path: derives the aggregates so the identities
    // s_metric = mean, s_lfc = w1*s_length + w2*s_format,
    // s_total = s_metric + s_lfc hold exactly.
    static ScoreVector make(double c, double p, double ue, double coh,
                            double s_length, double s_format,
                            double w1, double w2) {
        ScoreVector v;
        v.c_score = c;
        v.p_score = p;
        v.ue_score = ue;
        v.coh_unieval = coh;
        v.s_length = s_length;
        v.s_format = s_format;
        v.s_metric = (c + p + ue + coh) / 4.0;
        v.s_lfc = w1 * s_length + w2 * s_format;
        v.s_total = v.s_metric + v.s_lfc;
        return v;
    }
};

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    double chosen_score = 0;
    double rejected_score = 0;
    double margin = 0;
    std::string record_id;
    std::string chosen_model;
    std::string rejected_model;
    std::string pairing_mode;

    bool operator==(const PreferencePair&) const = default;

    void validate() const {
        if (!(margin > 0)) throw CoreError("pair margin must be > 0");
        if (std::fabs(margin - (chosen_score - rejected_score)) > 1e-12)
            throw CoreError("margin != chosen_score - rejected_score");
        if (chosen == rejected) throw CoreError("chosen equals rejected");
    }
};

// ---------------------------------------------------------------- config

struct EndpointSpec {
    std::string model_id;
    std::string base_url;
    std::string auth_env_var;
    int max_retries = 3;
    int backoff_base_ms = 100;
    int request_timeout_ms = 30000;
};

struct GenerationConfig {
    double temperature = 0.0;
    int max_tokens = 110;
    int parallelism = 4;  // max in-flight requests per endpoint
    std::vector<EndpointSpec> endpoints;
};

enum class LengthPenalty { binary, linear };

struct LfcConfig {
    double w1 = 2.0 / 3.0;
    double w2 = 1.0 / 3.0;
    int length_budget = 110;
    LengthPenalty penalty = LengthPenalty::linear;
    bool strip_wrappers = true;

    void validate() const {
        if (!(w1 > w2)) throw CoreError("lfc weights require w1 > w2");
        if (std::fabs(w1 + w2 - 1.0) > 1e-12)
            throw CoreError("lfc weights must satisfy w1 + w2 = 1");
        if (length_budget <= 0) throw CoreError("length_budget must be > 0");
    }
};

enum class PairingMode { margin, format_validity };

struct PairingPolicy {
    PairingMode mode = PairingMode::margin;
    double margin_threshold = 0.1;
    // 0 means unlimited.
    std::size_t max_pairs_per_prompt = 15;

    void validate() const {
        if (margin_threshold < 0) throw CoreError("margin_threshold must be >= 0");
    }
};

enum class ObjectiveMode { weighted_dpo, as_written };

struct TrainingConfig {
    double beta = 0.1;
    ObjectiveMode objective_mode = ObjectiveMode::weighted_dpo;
    int batch_size = 4;
    int grad_accum_steps = 4;
    int warmup_steps = 150;
    double learning_rate = 1e-3;
    int total_steps = 500;
    std::uint64_t seed = 0;
    int log_interval = 1;
    int embed_dim = 16;
    int hidden_dim = 32;

    void validate() const {
        if (!(beta > 0)) throw CoreError("beta must be > 0");
        if (batch_size <= 0) throw CoreError("batch_size must be > 0");
        if (grad_accum_steps <= 0) throw CoreError("grad_accum_steps must be > 0");
        if (warmup_steps < 0) throw CoreError("warmup_steps must be >= 0");
        if (total_steps < 0) throw CoreError("total_steps must be >= 0");
        if (!(learning_rate > 0)) throw CoreError("learning_rate must be > 0");
    }
};

// ------------------------------------------------------------- json codec

inline json to_json(const DialogueRecord& r) {
    json j;
    j["id"] = r.id;
    j["persona"] = r.persona;
    j["utterances"] = json::array();
    for (const auto& u : r.utterances)
        j["utterances"].push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
    if (r.gold_response) j["gold_response"] = *r.gold_response;
    return j;
}

inline DialogueRecord record_from_json(const json& j) {
    DialogueRecord r;
    r.id = j.at("id").get<std::string>();
    r.persona = j.at("persona").get<std::vector<std::string>>();
    for (const auto& u : j.at("utterances")) {
        r.utterances.push_back({speaker_from_string(u.at("speaker").get<std::string>()),
                                u.at("text").get<std::string>()});
    }
    if (j.contains("gold_response") && !j["gold_response"].is_null())
        r.gold_response = j["gold_response"].get<std::string>();
    return r;
}

inline json to_json(const CandidateResponse& c) {
    json j;
    j["record_id"] = c.record_id;
    j["model_id"] = c.model_id;
    j["raw_output"] = c.raw_output;
    if (c.parsed_response) j["parsed_response"] = *c.parsed_response;
    j["format_valid"] = c.format_valid;
    j["latency_ms"] = c.latency_ms;
    j["token_count"] = c.token_count;
    if (!c.failure.empty()) j["failure"] = c.failure;
    return j;
}

inline CandidateResponse candidate_from_json(const json& j) {
    CandidateResponse c;
    c.record_id = j.at("record_id").get<std::string>();
    c.model_id = j.at("model_id").get<std::string>();
    c.raw_output = j.at("raw_output").get<std::string>();
    if (j.contains("parsed_response") && !j["parsed_response"].is_null())
        c.parsed_response = j["parsed_response"].get<std::string>();
    c.format_valid = j.at("format_valid").get<bool>();
    c.latency_ms = j.at("latency_ms").get<std::int64_t>();
    c.token_count = j.at("token_count").get<std::int64_t>();
    if (j.contains("failure")) c.failure = j["failure"].get<std::string>();
    return c;
}

struct ScoreRecord {
    std::string record_id;
    std::string model_id;
    ScoreVector scores;

    bool operator==(const ScoreRecord&) const = default;
};

inline json to_json(const ScoreRecord& s) {
    return json{{"record_id", s.record_id},
                {"model_id", s.model_id},
                {"scores",
                 {{"c", s.scores.c_score},
                  {"p", s.scores.p_score},
                  {"ue", s.scores.ue_score},
                  {"coh_unieval", s.scores.coh_unieval},
                  {"s_length", s.scores.s_length},
                  {"s_format", s.scores.s_format},
                  {"s_metric", s.scores.s_metric},
                  {"s_lfc", s.scores.s_lfc},
                  {"s_total", s.scores.s_total}}}};
}

inline ScoreRecord score_record_from_json(const json& j) {
    ScoreRecord s;
    s.record_id = j.at("record_id").get<std::string>();
    s.model_id = j.at("model_id").get<std::string>();
    const auto& sc = j.at("scores");
    s.scores.c_score = sc.at("c").get<double>();
    s.scores.p_score = sc.at("p").get<double>();
    s.scores.ue_score = sc.at("ue").get<double>();
    s.scores.coh_unieval = sc.at("coh_unieval").get<double>();
    s.scores.s_length = sc.at("s_length").get<double>();
    s.scores.s_format = sc.at("s_format").get<double>();
    s.scores.s_metric = sc.at("s_metric").get<double>();
    s.scores.s_lfc = sc.at("s_lfc").get<double>();
    s.scores.s_total = sc.at("s_total").get<double>();
    return s;
}

inline json to_json(const PreferencePair& p) {
    return json{{"prompt", p.prompt},
                {"chosen", p.chosen},
                {"rejected", p.rejected},
                {"chosen_score", p.chosen_score},
                {"rejected_score", p.rejected_score},
                {"margin", p.margin},
                {"meta",
                 {{"record_id", p.record_id},
                  {"chosen_model", p.chosen_model},
                  {"rejected_model", p.rejected_model},
                  {"pairing_mode", p.pairing_mode}}}};
}

inline PreferencePair pair_from_json(const json& j) {
    PreferencePair p;
    p.prompt = j.at("prompt").get<std::string>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.chosen_score = j.at("chosen_score").get<double>();
    p.rejected_score = j.at("rejected_score").get<double>();
    p.margin = j.at("margin").get<double>();
    const auto& m = j.at("meta");
    p.record_id = m.at("record_id").get<std::string>();
    p.chosen_model = m.at("chosen_model").get<std::string>();
    p.rejected_model = m.at("rejected_model").get<std::string>();
    p.pairing_mode = m.at("pairing_mode").get<std::string>();
    return p;
}

// ---------------------------------------------------------------- jsonl io

inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CoreError("cannot open file: " + path);
    std::vector<json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw CoreError("malformed line " + std::to_string(lineno) + " in " +
                            path + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<DialogueRecord> load_records(const std::string& path) {
    std::vector<DialogueRecord> records;
    std::size_t lineno = 0;
    for (const auto& j : read_jsonl(path)) {
        ++lineno;
        DialogueRecord r;
        try {
            r = record_from_json(j);
        } catch (const json::exception& e) {
            throw CoreError("malformed line " + std::to_string(lineno) + " in " +
                            path + ": " + e.what());
        }
        try {
            r.validate();
        } catch (const CoreError& e) {
            throw CoreError(std::string(e.what()) + " at line " + std::to_string(lineno));
        }
        records.push_back(std::move(r));
    }
    return records;
}

template <typename T>
void write_jsonl(const std::vector<T>& items, const std::string& path) {
    std::ostringstream buf;
    for (const auto& item : items) buf << to_json(item).dump() << '\n';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CoreError("cannot write file: " + path);
    out << buf.str();
    if (!out) throw CoreError("write failed: " + path);
}

// Validates every pair before any bytes hit disk.
inline void write_pairs(const std::vector<PreferencePair>& pairs, const std::string& path) {
    for (const auto& p : pairs) p.validate();
    write_jsonl(pairs, path);
}

inline std::vector<PreferencePair> load_pairs(const std::string& path) {
    std::vector<PreferencePair> pairs;
    for (const auto& j : read_jsonl(path)) pairs.push_back(pair_from_json(j));
    for (const auto& p : pairs) p.validate();
    return pairs;
}

inline std::vector<CandidateResponse> load_candidates(const std::string& path) {
    std::vector<CandidateResponse> out;
    for (const auto& j : read_jsonl(path)) out.push_back(candidate_from_json(j));
    return out;
}

inline std::vector<ScoreRecord> load_score_records(const std::string& path) {
    std::vector<ScoreRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(score_record_from_json(j));
    return out;
}

}  // namespace persodpo
