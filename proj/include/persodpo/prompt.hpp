#pragma once

// Renders a DialogueRecord into the persona-augmented, format-instructed
// prompt string. Pure and deterministic: same inputs, same bytes.

#include <fstream>
#include <sstream>
#include <string>

#include "persodpo/core.hpp"

namespace persodpo {

struct PromptTemplate {
    std::string preamble =
        "You are the bot in the conversation below. Reply to the last human "
        "turn with a single response that stays consistent with the persona.";
    std::string persona_header = "Persona:";
    std::string history_header = "Conversation:";
    // {budget} is substituted with the length budget at render time.
    std::string format_instruction =
        "Output exactly one JSON object of the form {\"response\": \"...\"} "
        "with no other keys and no text outside the object. The response must "
        "be at most {budget} tokens long.";
};

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

// Template file layout: named slots {persona}, {history}, {format_instruction}.
// The slot bodies come from the default template; only the surrounding text
// is overridable.
inline PromptTemplate load_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CoreError("cannot open template file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    for (const char* slot : {"{persona}", "{history}", "{format_instruction}"})
        if (text.find(slot) == std::string::npos)
            throw CoreError(std::string("template missing slot ") + slot);
    PromptTemplate t;
    t.preamble = text;  // raw layout, expanded in build_prompt
    return t;
}

namespace detail {

inline std::string render_persona(const DialogueRecord& r, const PromptTemplate& t) {
    std::ostringstream out;
    out << t.persona_header << '\n';
    for (const auto& p : r.persona) out << "- " << p << '\n';
    return out.str();
}

inline std::string render_history(const DialogueRecord& r, const PromptTemplate& t) {
    std::ostringstream out;
    out << t.history_header << '\n';
    for (const auto& u : r.utterances)
        out << (u.speaker == Speaker::human ? "Human: " : "Bot: ") << u.text << '\n';
    return out.str();
}

}  // namespace detail

inline std::string build_prompt(const DialogueRecord& record, const PromptTemplate& tmpl,
                                int length_budget) {
    record.validate();
    if (length_budget <= 0) throw CoreError("length_budget must be > 0");

    std::string instruction =
        replace_all(tmpl.format_instruction, "{budget}", std::to_string(length_budget));
    std::string persona = detail::render_persona(record, tmpl);
    std::string history = detail::render_history(record, tmpl);

    if (tmpl.preamble.find("{persona}") != std::string::npos) {
        // Custom layout loaded from a template file.
        std::string out = tmpl.preamble;
        out = replace_all(out, "{persona}", persona);
        out = replace_all(out, "{history}", history);
        out = replace_all(out, "{format_instruction}", instruction);
        return out;
    }

    std::ostringstream out;
    out << tmpl.preamble << "\n\n" << persona << '\n' << history << '\n' << instruction << '\n';
    return out.str();
}

}  // namespace persodpo
