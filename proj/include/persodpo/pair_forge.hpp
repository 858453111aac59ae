#pragma once

// Preference-pair construction: margin-based selection over s_total and
// the baseline grouping by format validity. Output is deterministic:
// sorted by (record_id, descending margin, chosen model, rejected model).

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "persodpo/core.hpp"

namespace persodpo {

struct ScoredCandidate {
    CandidateResponse candidate;
    ScoreVector scores;
    bool has_scores = false;
};

using CandidatesByRecord = std::map<std::string, std::vector<ScoredCandidate>>;

inline CandidatesByRecord group_by_record(const std::vector<CandidateResponse>& candidates,
                                          const std::vector<ScoreRecord>& scores) {
    std::map<std::pair<std::string, std::string>, ScoreVector> table;
    for (const auto& s : scores) table[{s.record_id, s.model_id}] = s.scores;
    CandidatesByRecord out;
    for (const auto& c : candidates) {
        ScoredCandidate sc;
        sc.candidate = c;
        auto it = table.find({c.record_id, c.model_id});
        if (it != table.end()) {
            sc.scores = it->second;
            sc.has_scores = true;
        }
        out[c.record_id].push_back(std::move(sc));
    }
    return out;
}

namespace detail {

// The trainer must see the literal strings the policy ranks, so invalid
// outputs stay representable as rejections.
inline const std::string& pair_text(const ScoredCandidate& sc) {
    return sc.candidate.parsed_response ? *sc.candidate.parsed_response
                                        : sc.candidate.raw_output;
}

inline void sort_pairs(std::vector<PreferencePair>& pairs) {
    std::sort(pairs.begin(), pairs.end(), [](const PreferencePair& a, const PreferencePair& b) {
        if (a.record_id != b.record_id) return a.record_id < b.record_id;
        if (a.margin != b.margin) return a.margin > b.margin;
        if (a.chosen_model != b.chosen_model) return a.chosen_model < b.chosen_model;
        return a.rejected_model < b.rejected_model;
    });
}

inline void cap_per_record(std::vector<PreferencePair>& pairs, std::size_t cap) {
    if (cap == 0) return;  // unlimited
    std::vector<PreferencePair> kept;
    std::string current;
    std::size_t n = 0;
    for (auto& p : pairs) {
        if (p.record_id != current) {
            current = p.record_id;
            n = 0;
        }
        if (n++ < cap) kept.push_back(std::move(p));
    }
    pairs = std::move(kept);
}

}  // namespace detail

// Every ordered pair (a, b) with s_total(a) - s_total(b) >= tau and
// strictly positive margin, capped per record by descending margin.
inline std::vector<PreferencePair> forge_margin(const CandidatesByRecord& by_record,
                                                const PairingPolicy& policy,
                                                const std::map<std::string, std::string>& prompts) {
    policy.validate();
    std::vector<PreferencePair> pairs;
    for (const auto& [record_id, cands] : by_record) {
        for (const auto& sc : cands)
            if (!sc.has_scores)
                throw CoreError("candidate missing scores: (" + record_id + ", " +
                                sc.candidate.model_id + ")");
        auto pit = prompts.find(record_id);
        std::string prompt = pit == prompts.end() ? "" : pit->second;
        for (const auto& a : cands) {
            for (const auto& b : cands) {
                if (&a == &b) continue;
                double margin = a.scores.s_total - b.scores.s_total;
                if (margin < policy.margin_threshold || !(margin > 0)) continue;
                const std::string& chosen = detail::pair_text(a);
                const std::string& rejected = detail::pair_text(b);
                if (chosen == rejected) continue;
                PreferencePair p;
                p.prompt = prompt;
                p.chosen = chosen;
                p.rejected = rejected;
                p.chosen_score = a.scores.s_total;
                p.rejected_score = b.scores.s_total;
                p.margin = margin;
                p.record_id = record_id;
                p.chosen_model = a.candidate.model_id;
                p.rejected_model = b.candidate.model_id;
                p.pairing_mode = "margin";
                pairs.push_back(std::move(p));
            }
        }
    }
    detail::sort_pairs(pairs);
    detail::cap_per_record(pairs, policy.max_pairs_per_prompt);
    return pairs;
}

// Baseline construction: each format-valid candidate paired with each
// format-invalid one, s_format as the score proxy, margin = 1.
inline std::vector<PreferencePair> forge_validity(const CandidatesByRecord& by_record,
                                                  const PairingPolicy& policy,
                                                  const std::map<std::string, std::string>& prompts) {
    std::vector<PreferencePair> pairs;
    for (const auto& [record_id, cands] : by_record) {
        auto pit = prompts.find(record_id);
        std::string prompt = pit == prompts.end() ? "" : pit->second;
        for (const auto& a : cands) {
            if (!a.candidate.format_valid) continue;
            for (const auto& b : cands) {
                if (b.candidate.format_valid) continue;
                const std::string& chosen = detail::pair_text(a);
                const std::string& rejected = detail::pair_text(b);
                if (chosen == rejected) continue;
                PreferencePair p;
                p.prompt = prompt;
                p.chosen = chosen;
                p.rejected = rejected;
                p.chosen_score = 1.0;
                p.rejected_score = 0.0;
                p.margin = 1.0;
                p.record_id = record_id;
                p.chosen_model = a.candidate.model_id;
                p.rejected_model = b.candidate.model_id;
                p.pairing_mode = "format_validity";
                pairs.push_back(std::move(p));
            }
        }
    }
    detail::sort_pairs(pairs);
    detail::cap_per_record(pairs, policy.max_pairs_per_prompt);
    return pairs;
}

}  // namespace persodpo
