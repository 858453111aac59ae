#pragma once

// End-to-end orchestration: config file parsing with strict key checking,
// the five pipeline stages, and the run manifest with content digests.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "persodpo/core.hpp"
#include "persodpo/gen_client.hpp"
#include "persodpo/lfc.hpp"
#include "persodpo/metrics.hpp"
#include "persodpo/pair_forge.hpp"
#include "persodpo/prompt.hpp"
#include "persodpo/report.hpp"
#include "persodpo/trainer.hpp"

namespace persodpo {

struct PipelineConfig {
    std::string records_path;
    std::string workdir = "out";
    std::string template_path;  // optional
    GenerationConfig generation;
    LfcConfig lfc;
    std::vector<EvaluatorAdapter> adapters;
    Strictness strictness = Strictness::strict;
    PairingPolicy pairing;
    TrainingConfig training;
    json raw;  // canonical parsed form, hashed into the manifest

    void validate() const {
        lfc.validate();
        pairing.validate();
        training.validate();
        if (generation.temperature < 0) throw CoreError("temperature must be >= 0");
        if (generation.max_tokens <= 0) throw CoreError("max_tokens must be > 0");
        std::set<std::string> ids;
        for (const auto& e : generation.endpoints)
            if (!ids.insert(e.model_id).second)
                throw CoreError("duplicate endpoint model_id: " + e.model_id);
    }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw CoreError("unknown config key '" + key + "' in " + context);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

inline PipelineConfig parse_config(const json& j) {
    using detail::check_keys;
    using detail::get_or;
    PipelineConfig cfg;
    cfg.raw = j;
    check_keys(j, {"records", "workdir", "template", "generation", "lfc", "metrics", "pairing",
                   "training"},
               "top level");
    cfg.records_path = get_or<std::string>(j, "records", "");
    cfg.workdir = get_or<std::string>(j, "workdir", "out");
    cfg.template_path = get_or<std::string>(j, "template", "");

    if (j.contains("generation")) {
        const auto& g = j.at("generation");
        check_keys(g, {"temperature", "max_tokens", "parallelism", "endpoints"}, "generation");
        cfg.generation.temperature = get_or<double>(g, "temperature", 0.0);
        cfg.generation.max_tokens = get_or<int>(g, "max_tokens", 110);
        cfg.generation.parallelism = get_or<int>(g, "parallelism", 4);
        for (const auto& e : get_or<json>(g, "endpoints", json::array())) {
            check_keys(e,
                       {"model_id", "base_url", "auth_env_var", "max_retries", "backoff_base_ms",
                        "request_timeout_ms"},
                       "generation.endpoints");
            EndpointSpec ep;
            ep.model_id = e.at("model_id").get<std::string>();
            ep.base_url = e.at("base_url").get<std::string>();
            ep.auth_env_var = get_or<std::string>(e, "auth_env_var", "");
            ep.max_retries = get_or<int>(e, "max_retries", 3);
            ep.backoff_base_ms = get_or<int>(e, "backoff_base_ms", 100);
            ep.request_timeout_ms = get_or<int>(e, "request_timeout_ms", 30000);
            cfg.generation.endpoints.push_back(std::move(ep));
        }
    }

    if (j.contains("lfc")) {
        const auto& l = j.at("lfc");
        check_keys(l, {"w1", "w2", "length_budget", "length_penalty", "strip_wrappers"}, "lfc");
        cfg.lfc.w1 = get_or<double>(l, "w1", cfg.lfc.w1);
        cfg.lfc.w2 = get_or<double>(l, "w2", cfg.lfc.w2);
        cfg.lfc.length_budget = get_or<int>(l, "length_budget", cfg.lfc.length_budget);
        std::string pen = get_or<std::string>(l, "length_penalty", "linear");
        if (pen == "binary") cfg.lfc.penalty = LengthPenalty::binary;
        else if (pen == "linear") cfg.lfc.penalty = LengthPenalty::linear;
        else throw CoreError("unknown length_penalty: " + pen);
        cfg.lfc.strip_wrappers = get_or<bool>(l, "strip_wrappers", true);
    }

    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        check_keys(m, {"strictness", "adapters"}, "metrics");
        std::string strict = get_or<std::string>(m, "strictness", "strict");
        if (strict == "strict") cfg.strictness = Strictness::strict;
        else if (strict == "lenient") cfg.strictness = Strictness::lenient;
        else throw CoreError("unknown strictness: " + strict);
        for (const auto& a : get_or<json>(m, "adapters", json::array())) {
            check_keys(a, {"metric_id", "kind", "source", "auth_env_var", "rubric", "scale",
                           "offset"},
                       "metrics.adapters");
            EvaluatorAdapter ad;
            ad.metric_id = metric_from_string(a.at("metric_id").get<std::string>());
            std::string kind = a.at("kind").get<std::string>();
            if (kind == "precomputed_file") ad.kind = AdapterKind::precomputed_file;
            else if (kind == "judge_endpoint") ad.kind = AdapterKind::judge_endpoint;
            else throw CoreError("unknown adapter kind: " + kind);
            ad.source = a.at("source").get<std::string>();
            ad.auth_env_var = get_or<std::string>(a, "auth_env_var", "");
            ad.rubric_path = get_or<std::string>(a, "rubric", "");
            ad.scale = get_or<double>(a, "scale", 1.0);
            ad.offset = get_or<double>(a, "offset", 0.0);
            cfg.adapters.push_back(std::move(ad));
        }
    }

    if (j.contains("pairing")) {
        const auto& p = j.at("pairing");
        check_keys(p, {"mode", "margin_threshold", "max_pairs_per_prompt"}, "pairing");
        std::string mode = get_or<std::string>(p, "mode", "margin");
        if (mode == "margin") cfg.pairing.mode = PairingMode::margin;
        else if (mode == "format_validity") cfg.pairing.mode = PairingMode::format_validity;
        else throw CoreError("unknown pairing mode: " + mode);
        cfg.pairing.margin_threshold = get_or<double>(p, "margin_threshold", 0.1);
        cfg.pairing.max_pairs_per_prompt =
            get_or<std::size_t>(p, "max_pairs_per_prompt", 15);
    }

    if (j.contains("training")) {
        const auto& t = j.at("training");
        check_keys(t,
                   {"beta", "objective_mode", "batch_size", "grad_accum_steps", "warmup_steps",
                    "learning_rate", "total_steps", "seed", "log_interval", "embed_dim",
                    "hidden_dim"},
                   "training");
        cfg.training.beta = get_or<double>(t, "beta", 0.1);
        std::string om = get_or<std::string>(t, "objective_mode", "weighted_dpo");
        if (om == "weighted_dpo") cfg.training.objective_mode = ObjectiveMode::weighted_dpo;
        else if (om == "as_written") cfg.training.objective_mode = ObjectiveMode::as_written;
        else throw CoreError("unknown objective_mode: " + om);
        cfg.training.batch_size = get_or<int>(t, "batch_size", 4);
        cfg.training.grad_accum_steps = get_or<int>(t, "grad_accum_steps", 4);
        cfg.training.warmup_steps = get_or<int>(t, "warmup_steps", 150);
        cfg.training.learning_rate = get_or<double>(t, "learning_rate", 1e-3);
        cfg.training.total_steps = get_or<int>(t, "total_steps", 500);
        cfg.training.seed = get_or<std::uint64_t>(t, "seed", 0);
        cfg.training.log_interval = get_or<int>(t, "log_interval", 1);
        cfg.training.embed_dim = get_or<int>(t, "embed_dim", 16);
        cfg.training.hidden_dim = get_or<int>(t, "hidden_dim", 32);
    }

    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CoreError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, true);
    return parse_config(j);
}

// ----------------------------------------------------------------- stages

namespace paths {
inline std::string candidates(const PipelineConfig& c) { return c.workdir + "/candidates.jsonl"; }
inline std::string scored(const PipelineConfig& c) { return c.workdir + "/scored_candidates.jsonl"; }
inline std::string scores(const PipelineConfig& c) { return c.workdir + "/scores.jsonl"; }
inline std::string pairs(const PipelineConfig& c) { return c.workdir + "/pairs.jsonl"; }
inline std::string telemetry(const PipelineConfig& c) { return c.workdir + "/telemetry.jsonl"; }
inline std::string checkpoint(const PipelineConfig& c) { return c.workdir + "/checkpoint.json"; }
inline std::string report_json(const PipelineConfig& c) { return c.workdir + "/report.json"; }
inline std::string report_txt(const PipelineConfig& c) { return c.workdir + "/report.txt"; }
inline std::string manifest(const PipelineConfig& c) { return c.workdir + "/manifest.json"; }
}  // namespace paths

namespace detail {

inline void require_artifact(const std::string& stage, const std::string& path) {
    if (!std::filesystem::exists(path))
        throw CoreError("stage " + stage + " requires " + path);
}

inline PromptTemplate template_for(const PipelineConfig& cfg) {
    return cfg.template_path.empty() ? PromptTemplate{} : load_template(cfg.template_path);
}

}  // namespace detail

inline void stage_generate(const PipelineConfig& cfg) {
    detail::require_artifact("generate", cfg.records_path);
    if (cfg.generation.endpoints.empty())
        throw CoreError("stage generate requires configured endpoints");
    auto records = load_records(cfg.records_path);
    auto candidates = generate_all(records, cfg.generation.endpoints, detail::template_for(cfg),
                                   cfg.generation, cfg.lfc.length_budget);
    std::filesystem::create_directories(cfg.workdir);
    write_jsonl(candidates, paths::candidates(cfg));
}

inline void stage_score(const PipelineConfig& cfg) {
    detail::require_artifact("score", paths::candidates(cfg));
    auto candidates = load_candidates(paths::candidates(cfg));

    std::vector<LfcResult> lfc(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        lfc[i] = score_lfc(candidates[i].raw_output, cfg.lfc);
        candidates[i].parsed_response = lfc[i].parsed_response;
        candidates[i].format_valid = lfc[i].s_format == 1.0;
        candidates[i].token_count = lfc[i].token_count;
    }

    auto raw_scores = fetch_scores(candidates, cfg.adapters, cfg.strictness);
    std::vector<ScoreRecord> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& c = candidates[i];
        const auto& raw = raw_scores.at({c.record_id, c.model_id});
        if (!raw.complete() && cfg.strictness == Strictness::lenient) continue;
        ScoreRecord sr;
        sr.record_id = c.record_id;
        sr.model_id = c.model_id;
        sr.scores = aggregate(raw, lfc[i], cfg.lfc);
        out.push_back(std::move(sr));
    }
    write_jsonl(candidates, paths::scored(cfg));
    write_jsonl(out, paths::scores(cfg));
}

inline void stage_pair(const PipelineConfig& cfg) {
    detail::require_artifact("pair", paths::scored(cfg));
    detail::require_artifact("pair", paths::scores(cfg));
    auto candidates = load_candidates(paths::scored(cfg));
    auto scores = load_score_records(paths::scores(cfg));
    auto grouped = group_by_record(candidates, scores);

    std::map<std::string, std::string> prompts;
    if (!cfg.records_path.empty() && std::filesystem::exists(cfg.records_path)) {
        auto tmpl = detail::template_for(cfg);
        for (const auto& r : load_records(cfg.records_path))
            prompts[r.id] = build_prompt(r, tmpl, cfg.lfc.length_budget);
    }

    auto pairs = cfg.pairing.mode == PairingMode::margin
                     ? forge_margin(grouped, cfg.pairing, prompts)
                     : forge_validity(grouped, cfg.pairing, prompts);
    write_pairs(pairs, paths::pairs(cfg));
}

inline void stage_train(const PipelineConfig& cfg) {
    detail::require_artifact("train", paths::pairs(cfg));
    auto pairs = load_pairs(paths::pairs(cfg));
    PolicyModel model(Vocab::ascii_printable(), cfg.training.embed_dim, cfg.training.hidden_dim);
    model.randomize(cfg.training.seed);
    auto result = train(pairs, cfg.training, std::move(model));
    write_jsonl(result.telemetry, paths::telemetry(cfg));
    save_checkpoint(result.model, paths::checkpoint(cfg));
}

inline void stage_report(const PipelineConfig& cfg) {
    detail::require_artifact("report", paths::scored(cfg));
    detail::require_artifact("report", paths::scores(cfg));
    auto candidates = load_candidates(paths::scored(cfg));
    auto scores = load_score_records(paths::scores(cfg));
    auto reports = build_report(candidates, scores);
    write_jsonl(reports, paths::report_json(cfg));
    std::ofstream txt(paths::report_txt(cfg), std::ios::binary | std::ios::trunc);
    txt << format_report_table(reports);
}

// -------------------------------------------------------------- manifest

inline std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "missing";
    std::stringstream ss;
    ss << in.rdbuf();
    return fnv1a_hex(ss.str());
}

inline int run_pipeline(const PipelineConfig& cfg, const std::vector<std::string>& stages) {
    cfg.validate();
    std::filesystem::create_directories(cfg.workdir);
    for (const auto& s : stages) {
        if (s == "generate") stage_generate(cfg);
        else if (s == "score") stage_score(cfg);
        else if (s == "pair") stage_pair(cfg);
        else if (s == "train") stage_train(cfg);
        else if (s == "report") stage_report(cfg);
        else throw CoreError("unknown stage: " + s);
    }

    json manifest;
    manifest["config_digest"] = fnv1a_hex(cfg.raw.dump());
    manifest["stages"] = stages;
    json files;
    for (const auto& p :
         {cfg.records_path, paths::candidates(cfg), paths::scored(cfg), paths::scores(cfg),
          paths::pairs(cfg), paths::telemetry(cfg), paths::checkpoint(cfg),
          paths::report_json(cfg), paths::report_txt(cfg)}) {
        if (!p.empty() && std::filesystem::exists(p)) files[p] = file_digest(p);
    }
    manifest["artifacts"] = files;
    std::ofstream out(paths::manifest(cfg), std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
    return 0;
}

}  // namespace persodpo
