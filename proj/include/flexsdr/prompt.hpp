#pragma once

#include "flexsdr/core.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace flexsdr::prompt {

// The assembled prompt is: system + reasoning + response-format
// instructions, one rendered block per demonstration in order, then the
// query block. Deterministic byte-for-byte for fixed inputs.
struct PromptTemplate {
    std::string system_instruction;
    std::string reasoning_instruction;
    std::string response_format_instruction;
    std::string demo_block;   // placeholders: {question} {reason} {judgment}
    std::string query_block;  // placeholders: {knowledge} {question}

    static const PromptTemplate& defaults();

    // Plain-text override file with [section] headers; sections not present
    // keep their default content.
    static PromptTemplate load(const std::filesystem::path& path);
};

std::string judgment_token(core::Label label);  // "<Yes>" / "<No>"

std::string render_demo_block(const core::Demonstration& demo,
                              const PromptTemplate& tmpl = PromptTemplate::defaults());

std::string assemble_prompt(const std::string& knowledge_text,
                            const std::string& question_text,
                            const std::vector<core::Demonstration>& demos,
                            const PromptTemplate& tmpl = PromptTemplate::defaults());

struct Judgment {
    core::Label prediction = core::Label::mismatch;
    std::string raw_text;
    bool parse_ok = false;
};

// Scans from the end for the last "<Yes>"/"<No>" token (case-insensitive);
// a bare final word "Yes"/"No" also counts. No token found -> parse_ok
// false and the fallback prediction 0.
Judgment parse_judgment(const std::string& raw);

}  // namespace flexsdr::prompt
