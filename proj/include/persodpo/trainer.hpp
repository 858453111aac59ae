#pragma once

// Desk-scale score-weighted DPO trainer. The policy is a tiny
// autoregressive categorical model (mean-pooled prefix embedding -> tanh
// hidden layer -> softmax over a character vocabulary) with hand-written
// analytic gradients, trained against a frozen reference copy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "persodpo/core.hpp"

namespace persodpo {

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Character-level vocabulary: BOS/EOS/UNK plus a fixed symbol set.
struct Vocab {
    static constexpr int kBos = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;

    std::string symbols;  // symbol i maps to token id i + 3

    static Vocab ascii_printable() {
        Vocab v;
        for (char c = 32; c < 127; ++c) v.symbols.push_back(c);
        return v;
    }

    static Vocab from_symbols(std::string syms) {
        Vocab v;
        v.symbols = std::move(syms);
        if (v.size() > 256) throw CoreError("vocab exceeds 256 symbols");
        return v;
    }

    int size() const { return static_cast<int>(symbols.size()) + 3; }

    int token(char c) const {
        auto pos = symbols.find(c);
        return pos == std::string::npos ? kUnk : static_cast<int>(pos) + 3;
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> out;
        out.reserve(text.size());
        for (char c : text) out.push_back(token(c));
        return out;
    }
};

struct PolicyModel {
    Vocab vocab;
    int embed_dim = 16;
    int hidden_dim = 32;
    // Flat parameter block: [emb | w1 | b1 | w2 | b2].
    std::vector<double> params;

    PolicyModel() = default;
    PolicyModel(Vocab v, int d, int h) : vocab(std::move(v)), embed_dim(d), hidden_dim(h) {
        params.assign(param_count(), 0.0);
    }

    int vocab_size() const { return vocab.size(); }
    std::size_t emb_off() const { return 0; }
    std::size_t w1_off() const { return emb_off() + std::size_t(vocab_size()) * embed_dim; }
    std::size_t b1_off() const { return w1_off() + std::size_t(hidden_dim) * embed_dim; }
    std::size_t w2_off() const { return b1_off() + hidden_dim; }
    std::size_t b2_off() const { return w2_off() + std::size_t(vocab_size()) * hidden_dim; }
    std::size_t param_count() const { return b2_off() + vocab_size(); }

    void randomize(std::uint64_t seed, double stddev = 0.08) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& p : params) p = dist(rng);
    }
};

namespace detail {

struct Forward {
    std::vector<double> input;    // mean of prefix embeddings
    std::vector<double> hidden;   // tanh activations
    std::vector<double> probs;    // softmax over vocab
    double logprob = 0;           // log P(target | prefix)
};

inline Forward forward_step(const PolicyModel& m, const std::vector<int>& prefix, int target) {
    const int V = m.vocab_size(), d = m.embed_dim, h = m.hidden_dim;
    Forward f;
    f.input.assign(d, 0.0);
    for (int tok : prefix)
        for (int j = 0; j < d; ++j) f.input[j] += m.params[m.emb_off() + std::size_t(tok) * d + j];
    for (int j = 0; j < d; ++j) f.input[j] /= static_cast<double>(prefix.size());

    f.hidden.assign(h, 0.0);
    for (int i = 0; i < h; ++i) {
        double a = m.params[m.b1_off() + i];
        for (int j = 0; j < d; ++j) a += m.params[m.w1_off() + std::size_t(i) * d + j] * f.input[j];
        f.hidden[i] = std::tanh(a);
    }

    std::vector<double> logits(V);
    double zmax = -1e300;
    for (int v = 0; v < V; ++v) {
        double z = m.params[m.b2_off() + v];
        for (int i = 0; i < h; ++i) z += m.params[m.w2_off() + std::size_t(v) * h + i] * f.hidden[i];
        logits[v] = z;
        zmax = std::max(zmax, z);
    }
    double denom = 0;
    for (int v = 0; v < V; ++v) denom += std::exp(logits[v] - zmax);
    f.probs.resize(V);
    for (int v = 0; v < V; ++v) f.probs[v] = std::exp(logits[v] - zmax) / denom;
    f.logprob = logits[target] - zmax - std::log(denom);
    return f;
}

// Accumulates coeff * d(log P(target|prefix))/d(theta) into grad.
inline void backward_step(const PolicyModel& m, const std::vector<int>& prefix, int target,
                          const Forward& f, double coeff, std::vector<double>& grad) {
    const int V = m.vocab_size(), d = m.embed_dim, h = m.hidden_dim;
    // d logprob / d logits = e_target - probs
    std::vector<double> dhidden(h, 0.0);
    for (int v = 0; v < V; ++v) {
        double dz = ((v == target) ? 1.0 : 0.0) - f.probs[v];
        grad[m.b2_off() + v] += coeff * dz;
        for (int i = 0; i < h; ++i) {
            grad[m.w2_off() + std::size_t(v) * h + i] += coeff * dz * f.hidden[i];
            dhidden[i] += dz * m.params[m.w2_off() + std::size_t(v) * h + i];
        }
    }
    std::vector<double> dinput(d, 0.0);
    for (int i = 0; i < h; ++i) {
        double da = dhidden[i] * (1.0 - f.hidden[i] * f.hidden[i]);
        grad[m.b1_off() + i] += coeff * da;
        for (int j = 0; j < d; ++j) {
            grad[m.w1_off() + std::size_t(i) * d + j] += coeff * da * f.input[j];
            dinput[j] += da * m.params[m.w1_off() + std::size_t(i) * d + j];
        }
    }
    double inv_len = 1.0 / static_cast<double>(prefix.size());
    for (int tok : prefix)
        for (int j = 0; j < d; ++j)
            grad[m.emb_off() + std::size_t(tok) * d + j] += coeff * dinput[j] * inv_len;
}

inline std::vector<int> prompt_prefix(const PolicyModel& m, const std::string& x) {
    std::vector<int> prefix{Vocab::kBos};
    auto xs = m.vocab.tokenize(x);
    prefix.insert(prefix.end(), xs.begin(), xs.end());
    return prefix;
}

}  // namespace detail

// Sum over t of log P(y_t | x, y_{1:t-1}); always <= 0.
inline double sequence_logprob(const PolicyModel& model, const std::string& x,
                               const std::string& y) {
    if (y.empty()) throw CoreError("sequence_logprob requires non-empty response");
    auto prefix = detail::prompt_prefix(model, x);
    auto ys = model.vocab.tokenize(y);
    double total = 0;
    for (int tok : ys) {
        total += detail::forward_step(model, prefix, tok).logprob;
        prefix.push_back(tok);
    }
    return total;
}

// Accumulates coeff * d(sequence_logprob)/d(theta) into grad.
inline double sequence_logprob_grad(const PolicyModel& model, const std::string& x,
                                    const std::string& y, double coeff,
                                    std::vector<double>& grad) {
    if (y.empty()) throw CoreError("sequence_logprob requires non-empty response");
    auto prefix = detail::prompt_prefix(model, x);
    auto ys = model.vocab.tokenize(y);
    double total = 0;
    for (int tok : ys) {
        auto f = detail::forward_step(model, prefix, tok);
        detail::backward_step(model, prefix, tok, f, coeff, grad);
        total += f.logprob;
        prefix.push_back(tok);
    }
    return total;
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Per-pair loss weight sigma(dS); higher-margin pairs pull harder.
inline double pair_weight(double score_margin) { return sigmoid(score_margin); }

struct PairTelemetry {
    double reward_margin = 0;  // u = beta * (delta_theta - delta_ref)
    bool reward_correct = false;
};

struct TrainState {
    PolicyModel policy;
    PolicyModel reference;  // frozen after initialization
    int step = 0;
};

struct PairLossResult {
    double loss = 0;
    PairTelemetry telemetry;
};

// weighted_dpo: loss = -sigma(dS) * log sigma(u), u = beta*(d_theta - d_ref).
// as_written:   loss = -sigma(dS) * beta * d_theta (no reference term).
inline PairLossResult pair_loss(const TrainState& state, const PreferencePair& pair, double beta,
                                ObjectiveMode mode) {
    if (!(beta > 0)) throw CoreError("beta must be > 0");
    pair.validate();
    double lp_c = sequence_logprob(state.policy, pair.prompt, pair.chosen);
    double lp_r = sequence_logprob(state.policy, pair.prompt, pair.rejected);
    double ref_c = sequence_logprob(state.reference, pair.prompt, pair.chosen);
    double ref_r = sequence_logprob(state.reference, pair.prompt, pair.rejected);
    if (!std::isfinite(lp_c) || !std::isfinite(lp_r) || !std::isfinite(ref_c) ||
        !std::isfinite(ref_r))
        throw NumericalError("non-finite logprob for pair (record " + pair.record_id + ", " +
                             pair.chosen_model + " vs " + pair.rejected_model + ")");

    double delta_theta = lp_c - lp_r;
    double u = beta * (delta_theta - (ref_c - ref_r));
    double weight = pair_weight(pair.margin);

    PairLossResult out;
    out.telemetry.reward_margin = u;
    out.telemetry.reward_correct = u > 0;
    if (mode == ObjectiveMode::weighted_dpo) {
        // -log sigma(u) = log(1 + exp(-u)), computed stably.
        double nls = u >= 0 ? std::log1p(std::exp(-u)) : -u + std::log1p(std::exp(u));
        out.loss = weight * nls;
    } else {
        out.loss = -weight * beta * delta_theta;
    }
    return out;
}

// Analytic gradient of pair_loss w.r.t. policy parameters; theta_ref and
// the score margin are constants.
inline PairLossResult grad_pair_loss(const TrainState& state, const PreferencePair& pair,
                                     double beta, ObjectiveMode mode,
                                     std::vector<double>& grad) {
    PairLossResult res = pair_loss(state, pair, beta, mode);
    double weight = pair_weight(pair.margin);
    double coeff;  // d loss / d delta_theta
    if (mode == ObjectiveMode::weighted_dpo) {
        coeff = -weight * beta * (1.0 - sigmoid(res.telemetry.reward_margin));
    } else {
        coeff = -weight * beta;
    }
    sequence_logprob_grad(state.policy, pair.prompt, pair.chosen, coeff, grad);
    sequence_logprob_grad(state.policy, pair.prompt, pair.rejected, -coeff, grad);
    return res;
}

struct TelemetryEntry {
    int step = 0;
    double loss = 0;
    double grad_norm = 0;
    double reward_margin = 0;
    double reward_accuracy = 0;
};

inline json to_json(const TelemetryEntry& t) {
    return json{{"step", t.step},
                {"loss", t.loss},
                {"grad_norm", t.grad_norm},
                {"reward_margin", t.reward_margin},
                {"reward_accuracy", t.reward_accuracy}};
}

struct TrainResult {
    PolicyModel model;
    std::vector<TelemetryEntry> telemetry;
};

// Linear warm-up to learning_rate over warmup_steps, then constant.
inline double lr_at_step(const TrainingConfig& cfg, int step_one_based) {
    if (cfg.warmup_steps > 0 && step_one_based <= cfg.warmup_steps)
        return cfg.learning_rate * static_cast<double>(step_one_based) / cfg.warmup_steps;
    return cfg.learning_rate;
}

inline TrainResult train(const std::vector<PreferencePair>& pairs, const TrainingConfig& cfg,
                         PolicyModel initial) {
    cfg.validate();
    if (pairs.empty()) throw CoreError("train requires at least one pair");

    TrainState state;
    state.policy = initial;
    state.reference = std::move(initial);

    const std::size_t n_params = state.policy.param_count();
    std::vector<double> grad(n_params), m1(n_params, 0.0), m2(n_params, 0.0);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    auto next_pair = [&]() -> const PreferencePair& {
        if (cursor == order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        return pairs[order[cursor++]];
    };

    TrainResult result;
    double acc_loss = 0, acc_margin = 0, acc_gnorm = 0;
    std::size_t acc_pairs = 0, acc_correct = 0;
    int steps_in_interval = 0;

    for (int step = 1; step <= cfg.total_steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        std::size_t consumed = std::size_t(cfg.batch_size) * cfg.grad_accum_steps;
        for (std::size_t k = 0; k < consumed; ++k) {
            const PreferencePair& p = next_pair();
            PairLossResult r;
            try {
                r = grad_pair_loss(state, p, cfg.beta, cfg.objective_mode, grad);
            } catch (const NumericalError& e) {
                throw NumericalError("divergence at step " + std::to_string(step) + ": " +
                                     e.what());
            }
            if (!std::isfinite(r.loss))
                throw NumericalError("divergence at step " + std::to_string(step) +
                                     ": non-finite loss");
            acc_loss += r.loss;
            acc_margin += r.telemetry.reward_margin;
            acc_correct += r.telemetry.reward_correct ? 1 : 0;
            ++acc_pairs;
        }
        double inv = 1.0 / static_cast<double>(consumed);
        double gnorm_sq = 0;
        for (auto& g : grad) {
            g *= inv;
            gnorm_sq += g * g;
        }
        acc_gnorm += std::sqrt(gnorm_sq);
        ++steps_in_interval;

        double lr = lr_at_step(cfg, step);
        double bc1 = 1.0 - std::pow(kBeta1, step);
        double bc2 = 1.0 - std::pow(kBeta2, step);
        for (std::size_t i = 0; i < n_params; ++i) {
            m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * grad[i];
            m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * grad[i] * grad[i];
            state.policy.params[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + kEps);
        }
        state.step = step;

        if (step % cfg.log_interval == 0 || step == cfg.total_steps) {
            TelemetryEntry t;
            t.step = step;
            t.loss = acc_loss / acc_pairs;
            t.grad_norm = acc_gnorm / steps_in_interval;
            t.reward_margin = acc_margin / acc_pairs;
            t.reward_accuracy = static_cast<double>(acc_correct) / acc_pairs;
            result.telemetry.push_back(t);
            acc_loss = acc_margin = acc_gnorm = 0;
            acc_pairs = acc_correct = 0;
            steps_in_interval = 0;
        }
    }
    result.model = std::move(state.policy);
    return result;
}

// ------------------------------------------------------------ checkpoint

inline json checkpoint_json(const PolicyModel& m) {
    return json{{"format", "persodpo-policy-v1"},
                {"vocab_symbols", m.vocab.symbols},
                {"embed_dim", m.embed_dim},
                {"hidden_dim", m.hidden_dim},
                {"params", m.params}};
}

inline void save_checkpoint(const PolicyModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CoreError("cannot write checkpoint: " + path);
    out << checkpoint_json(m).dump() << '\n';
}

inline PolicyModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CoreError("cannot open checkpoint: " + path);
    json j;
    in >> j;
    if (j.at("format").get<std::string>() != "persodpo-policy-v1")
        throw CoreError("unknown checkpoint format");
    PolicyModel m(Vocab::from_symbols(j.at("vocab_symbols").get<std::string>()),
                  j.at("embed_dim").get<int>(), j.at("hidden_dim").get<int>());
    m.params = j.at("params").get<std::vector<double>>();
    if (m.params.size() != m.param_count()) throw CoreError("checkpoint parameter size mismatch");
    return m;
}

// FNV-1a over the raw parameter bytes; used to assert reference immutability.
inline std::uint64_t param_hash(const PolicyModel& m) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.params.data());
    for (std::size_t i = 0; i < m.params.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace persodpo
