// persodpo CLI: runs pipeline stages individually or end to end.
// API tokens come from environment variables named in the config file.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "persodpo/pipeline.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::int64_t seed_override = -1;
};

persodpo::PipelineConfig load(const CommonOpts& opts) {
    auto cfg = persodpo::load_config(opts.config_path);
    if (opts.seed_override >= 0)
        cfg.training.seed = static_cast<std::uint64_t>(opts.seed_override);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PersoDPO pipeline: generation, scoring, pairing, training, reporting"};
    app.require_subcommand(1);
    app.fallthrough();  // allow --config after the subcommand name

    CommonOpts opts;
    app.add_option("--config", opts.config_path, "pipeline config file (JSON)")->required();
    app.add_option("--seed", opts.seed_override, "override the training seed");

    auto* gen = app.add_subcommand("generate", "collect candidate responses from endpoints");
    auto* score = app.add_subcommand("score", "compute LFC and metric scores for candidates");
    auto* pair = app.add_subcommand("pair", "construct preference pairs from scored candidates");
    auto* train = app.add_subcommand("train", "train the toy policy on preference pairs");
    auto* report = app.add_subcommand("report", "emit per-model evaluation reports");
    auto* pipeline = app.add_subcommand("pipeline", "run stages in sequence");

    std::string pair_mode;
    double margin_threshold = -1;
    std::int64_t max_pairs = -1;
    pair->add_option("--mode", pair_mode, "margin | format_validity");
    pair->add_option("--margin-threshold", margin_threshold, "minimum s_total margin");
    pair->add_option("--max-pairs-per-prompt", max_pairs, "pair cap per record (0 = unlimited)");

    std::string objective_mode;
    double beta = -1;
    std::int64_t steps = -1, warmup = -1, batch = -1, accum = -1;
    train->add_option("--objective-mode", objective_mode, "weighted_dpo | as_written");
    train->add_option("--beta", beta, "DPO beta");
    train->add_option("--steps", steps, "total optimizer steps");
    train->add_option("--warmup-steps", warmup, "linear warm-up steps");
    train->add_option("--batch-size", batch, "pairs per micro-batch");
    train->add_option("--grad-accum", accum, "micro-batches per optimizer step");

    std::vector<std::string> stages{"generate", "score", "pair", "train", "report"};
    pipeline->add_option("--stages", stages, "subset of stages to run, in order");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load(opts);
        if (pair->parsed()) {
            if (!pair_mode.empty()) {
                if (pair_mode == "margin") cfg.pairing.mode = persodpo::PairingMode::margin;
                else if (pair_mode == "format_validity")
                    cfg.pairing.mode = persodpo::PairingMode::format_validity;
                else throw persodpo::CoreError("unknown pairing mode: " + pair_mode);
            }
            if (margin_threshold >= 0) cfg.pairing.margin_threshold = margin_threshold;
            if (max_pairs >= 0) cfg.pairing.max_pairs_per_prompt = max_pairs;
        }
        if (train->parsed()) {
            if (!objective_mode.empty()) {
                if (objective_mode == "weighted_dpo")
                    cfg.training.objective_mode = persodpo::ObjectiveMode::weighted_dpo;
                else if (objective_mode == "as_written")
                    cfg.training.objective_mode = persodpo::ObjectiveMode::as_written;
                else throw persodpo::CoreError("unknown objective mode: " + objective_mode);
            }
            if (beta > 0) cfg.training.beta = beta;
            if (steps >= 0) cfg.training.total_steps = static_cast<int>(steps);
            if (warmup >= 0) cfg.training.warmup_steps = static_cast<int>(warmup);
            if (batch > 0) cfg.training.batch_size = static_cast<int>(batch);
            if (accum > 0) cfg.training.grad_accum_steps = static_cast<int>(accum);
        }
        cfg.validate();

        if (gen->parsed()) persodpo::stage_generate(cfg);
        else if (score->parsed()) persodpo::stage_score(cfg);
        else if (pair->parsed()) persodpo::stage_pair(cfg);
        else if (train->parsed()) persodpo::stage_train(cfg);
        else if (report->parsed()) persodpo::stage_report(cfg);
        else if (pipeline->parsed()) return persodpo::run_pipeline(cfg, stages);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
