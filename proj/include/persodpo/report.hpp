#pragma once

// Per-model evaluation report: metric means +/- population std, failure
// ratio, and latency percentiles.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "persodpo/core.hpp"

namespace persodpo {

struct Stat {
    double mean = 0;
    double std_dev = 0;  // population
};

struct ModelReport {
    std::string model_id;
    Stat c, p, ue, coh_unieval, s_lfc, s_total;
    double failure_ratio = 0;
    double latency_mean_ms = 0;
    double latency_p50_ms = 0;
    double latency_p95_ms = 0;
    std::size_t n = 0;
};

namespace detail {

inline Stat stat_of(const std::vector<double>& xs) {
    Stat s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= xs.size();
    double var = 0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.std_dev = std::sqrt(var / xs.size());
    return s;
}

// Nearest-rank percentile on a sorted copy.
inline double percentile(std::vector<double> xs, double q) {
    if (xs.empty()) return 0;
    std::sort(xs.begin(), xs.end());
    std::size_t idx = static_cast<std::size_t>(std::ceil(q * xs.size()));
    if (idx > 0) --idx;
    return xs[idx];
}

}  // namespace detail

inline std::vector<ModelReport> build_report(const std::vector<CandidateResponse>& candidates,
                                             const std::vector<ScoreRecord>& scores) {
    if (candidates.empty()) throw CoreError("build_report requires at least one candidate");
    std::map<std::pair<std::string, std::string>, ScoreVector> table;
    for (const auto& s : scores) table[{s.record_id, s.model_id}] = s.scores;

    struct Acc {
        std::vector<double> c, p, ue, coh, lfc, total, latency;
        std::size_t invalid = 0, n = 0;
    };
    std::map<std::string, Acc> by_model;
    for (const auto& cand : candidates) {
        Acc& a = by_model[cand.model_id];
        ++a.n;
        a.latency.push_back(static_cast<double>(cand.latency_ms));
        if (!cand.format_valid) ++a.invalid;
        auto it = table.find({cand.record_id, cand.model_id});
        if (it != table.end()) {
            a.c.push_back(it->second.c_score);
            a.p.push_back(it->second.p_score);
            a.ue.push_back(it->second.ue_score);
            a.coh.push_back(it->second.coh_unieval);
            a.lfc.push_back(it->second.s_lfc);
            a.total.push_back(it->second.s_total);
        }
    }

    std::vector<ModelReport> out;
    for (const auto& [model_id, a] : by_model) {
        ModelReport r;
        r.model_id = model_id;
        r.c = detail::stat_of(a.c);
        r.p = detail::stat_of(a.p);
        r.ue = detail::stat_of(a.ue);
        r.coh_unieval = detail::stat_of(a.coh);
        r.s_lfc = detail::stat_of(a.lfc);
        r.s_total = detail::stat_of(a.total);
        r.failure_ratio = static_cast<double>(a.invalid) / a.n;
        r.latency_mean_ms = detail::stat_of(a.latency).mean;
        r.latency_p50_ms = detail::percentile(a.latency, 0.50);
        r.latency_p95_ms = detail::percentile(a.latency, 0.95);
        r.n = a.n;
        out.push_back(std::move(r));
    }
    return out;
}

inline json to_json(const ModelReport& r) {
    auto stat = [](const Stat& s) { return json{{"mean", s.mean}, {"std", s.std_dev}}; };
    return json{{"model_id", r.model_id},
                {"coh_unieval", stat(r.coh_unieval)},
                {"c", stat(r.c)},
                {"ue", stat(r.ue)},
                {"p", stat(r.p)},
                {"s_lfc", stat(r.s_lfc)},
                {"s_total", stat(r.s_total)},
                {"failure_ratio", r.failure_ratio},
                {"latency_ms",
                 {{"mean", r.latency_mean_ms}, {"p50", r.latency_p50_ms}, {"p95", r.latency_p95_ms}}},
                {"n", r.n}};
}

// Aligned text table; column order Coh-UniEval, C, UE, P. Stds are
// population stds.
inline std::string format_report_table(const std::vector<ModelReport>& reports) {
    std::ostringstream out;
    out << "# per-model report (mean +/- population std)\n";
    out << std::left << std::setw(24) << "model" << std::setw(16) << "Coh-UniEval"
        << std::setw(16) << "C" << std::setw(16) << "UE" << std::setw(16) << "P"
        << std::setw(10) << "fail" << std::setw(12) << "lat_ms(p50)" << "n\n";
    auto cell = [](const Stat& s) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(2) << s.mean << " +/- " << s.std_dev;
        return c.str();
    };
    for (const auto& r : reports) {
        out << std::left << std::setw(24) << r.model_id << std::setw(16) << cell(r.coh_unieval)
            << std::setw(16) << cell(r.c) << std::setw(16) << cell(r.ue) << std::setw(16)
            << cell(r.p) << std::setw(10) << std::fixed << std::setprecision(3)
            << r.failure_ratio << std::setw(12) << std::setprecision(1) << r.latency_p50_ms
            << r.n << '\n';
    }
    return out.str();
}

}  // namespace persodpo
