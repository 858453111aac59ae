#pragma once

// Length-Format Compliance scoring: parse the raw model output, check the
// single-field JSON contract, measure length against the budget, and
// combine the two signals as w1*s_length + w2*s_format with w1 > w2.

#include <algorithm>
#include <optional>
#include <string>

#include "persodpo/core.hpp"

namespace persodpo {

enum class LfcFailure { none, not_parseable, wrong_shape, empty_response, overlength };

inline std::string to_string(LfcFailure f) {
    switch (f) {
        case LfcFailure::none: return "none";
        case LfcFailure::not_parseable: return "not_parseable";
        case LfcFailure::wrong_shape: return "wrong_shape";
        case LfcFailure::empty_response: return "empty_response";
        case LfcFailure::overlength: return "overlength";
    }
    return "none";
}

struct LfcResult {
    double s_length = 0;
    double s_format = 0;
    double s_lfc = 0;
    std::optional<std::string> parsed_response;
    std::int64_t token_count = 0;
    LfcFailure failure_reason = LfcFailure::none;
};

struct FormatResult {
    double s_format = 0;
    std::optional<std::string> parsed_response;
    LfcFailure failure_reason = LfcFailure::none;
};

namespace detail {

// Strips markdown code fences and surrounding prose, returning the best
// candidate JSON span. Models frequently wrap the object in text.
inline std::optional<json> extract_object(const std::string& raw, bool strip_wrappers) {
    std::string text = trim(raw);
    if (text.empty()) return std::nullopt;

    auto try_parse = [](const std::string& s) -> std::optional<json> {
        json j = json::parse(s, nullptr, false);
        if (j.is_discarded()) return std::nullopt;
        return j;
    };

    if (auto j = try_parse(text)) return j;
    if (!strip_wrappers) return std::nullopt;

    // Code fence body.
    auto fence = text.find("```");
    if (fence != std::string::npos) {
        auto body_start = text.find('\n', fence);
        auto fence_end = text.rfind("```");
        if (body_start != std::string::npos && fence_end > body_start) {
            auto body = trim(text.substr(body_start + 1, fence_end - body_start - 1));
            if (auto j = try_parse(body)) return j;
        }
    }

    // Balanced-brace scan from the first '{'.
    auto start = text.find('{');
    while (start != std::string::npos) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
            } else if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    if (auto j = try_parse(text.substr(start, i - start + 1))) return j;
                    break;
                }
            }
        }
        start = text.find('{', start + 1);
    }
    return std::nullopt;
}

}  // namespace detail

// s_format = 1 iff the output parses to an object with exactly one key
// "response" holding a non-empty string. All failures are scores.
inline FormatResult score_format(const std::string& raw_output, bool strip_wrappers = true) {
    FormatResult r;
    auto obj = detail::extract_object(raw_output, strip_wrappers);
    if (!obj) {
        r.failure_reason = LfcFailure::not_parseable;
        return r;
    }
    if (!obj->is_object() || obj->size() != 1 || !obj->contains("response") ||
        !(*obj)["response"].is_string()) {
        r.failure_reason = LfcFailure::wrong_shape;
        return r;
    }
    std::string response = (*obj)["response"].get<std::string>();
    if (trim(response).empty()) {
        r.failure_reason = LfcFailure::empty_response;
        return r;
    }
    r.s_format = 1.0;
    r.parsed_response = response;
    return r;
}

// Whitespace-delimited token count; the signal only needs a monotone proxy.
inline std::int64_t count_tokens(const std::string& text) {
    std::int64_t n = 0;
    bool in_token = false;
    for (char c : text) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_token) ++n;
        in_token = !ws;
    }
    return n;
}

struct LengthResult {
    double s_length = 0;
    std::int64_t token_count = 0;
};

// Budget boundary is inclusive: token_count == budget scores 1.
inline LengthResult score_length(const std::optional<std::string>& parsed_response,
                                 int length_budget, LengthPenalty penalty) {
    if (length_budget <= 0) throw CoreError("length_budget must be > 0");
    LengthResult r;
    if (!parsed_response) return r;
    r.token_count = count_tokens(*parsed_response);
    if (r.token_count <= length_budget) {
        r.s_length = 1.0;
    } else if (penalty == LengthPenalty::binary) {
        r.s_length = 0.0;
    } else {
        double over = static_cast<double>(r.token_count - length_budget);
        r.s_length = std::max(0.0, 1.0 - over / length_budget);
    }
    return r;
}

inline LfcResult score_lfc(const std::string& raw_output, const LfcConfig& config) {
    config.validate();
    LfcResult out;
    FormatResult f = score_format(raw_output, config.strip_wrappers);
    LengthResult l = score_length(f.parsed_response, config.length_budget, config.penalty);
    out.s_format = f.s_format;
    out.parsed_response = f.parsed_response;
    out.s_length = l.s_length;
    out.token_count = l.token_count;
    out.failure_reason = f.failure_reason;
    if (out.failure_reason == LfcFailure::none && out.s_length < 1.0)
        out.failure_reason = LfcFailure::overlength;
    out.s_lfc = config.w1 * out.s_length + config.w2 * out.s_format;
    return out;
}

}  // namespace persodpo
