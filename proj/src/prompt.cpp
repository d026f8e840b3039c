#include "flexsdr/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

namespace flexsdr::prompt {

namespace {

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

const PromptTemplate& PromptTemplate::defaults() {
    static const PromptTemplate t{
        "You are a knowledge concept annotator. Your job is to judge whether the "
        "<Question> is concerning the <Knowledge>.",
        "You should first provide the reasons before giving your judgement.",
        "The judgment token: <Yes> or <No> should be provided at the end of the response.",
        "<Question>: {question}\nReason: {reason}\nJudgment: {judgment}\n",
        "<Knowledge>: {knowledge}\n<Question>: {question}\n",
    };
    return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open template file: " + path.string());

    PromptTemplate t = defaults();
    std::string line;
    std::string* target = nullptr;
    std::string buffer;
    auto flush = [&] {
        if (target) {
            // Drop the final newline the line loop appended.
            if (!buffer.empty() && buffer.back() == '\n') buffer.pop_back();
            *target = buffer;
        }
        buffer.clear();
    };
    while (std::getline(in, line)) {
        if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
            flush();
            const std::string name = line.substr(1, line.size() - 2);
            if (name == "system_instruction") target = &t.system_instruction;
            else if (name == "reasoning_instruction") target = &t.reasoning_instruction;
            else if (name == "response_format_instruction") target = &t.response_format_instruction;
            else if (name == "demo_block") target = &t.demo_block;
            else if (name == "query_block") target = &t.query_block;
            else throw std::runtime_error("unknown template section [" + name + "]");
            continue;
        }
        if (target) buffer += line + '\n';
    }
    flush();
    return t;
}

std::string judgment_token(core::Label label) {
    return label == core::Label::match ? "<Yes>" : "<No>";
}

std::string render_demo_block(const core::Demonstration& demo, const PromptTemplate& tmpl) {
    std::string block = tmpl.demo_block;
    block = replace_all(block, "{question}", demo.question_text);
    block = replace_all(block, "{reason}", demo.reason_text);
    block = replace_all(block, "{judgment}", judgment_token(demo.label));
    return block;
}

std::string assemble_prompt(const std::string& knowledge_text, const std::string& question_text,
                            const std::vector<core::Demonstration>& demos,
                            const PromptTemplate& tmpl) {
    std::string out;
    out += tmpl.system_instruction;
    out += '\n';
    out += tmpl.reasoning_instruction;
    out += '\n';
    out += tmpl.response_format_instruction;
    out += "\n\n";
    for (const auto& demo : demos) {
        out += render_demo_block(demo, tmpl);
        out += '\n';
    }
    std::string query = tmpl.query_block;
    query = replace_all(query, "{knowledge}", knowledge_text);
    query = replace_all(query, "{question}", question_text);
    out += query;
    return out;
}

Judgment parse_judgment(const std::string& raw) {
    Judgment j;
    j.raw_text = raw;

    const std::string text = lower(raw);
    const std::size_t yes_pos = text.rfind("<yes>");
    const std::size_t no_pos = text.rfind("<no>");

    if (yes_pos != std::string::npos || no_pos != std::string::npos) {
        const bool yes_wins =
            no_pos == std::string::npos || (yes_pos != std::string::npos && yes_pos > no_pos);
        j.prediction = yes_wins ? core::Label::match : core::Label::mismatch;
        j.parse_ok = true;
        return j;
    }

    // Bare final word: strip trailing whitespace/punctuation, take the last
    // whitespace-delimited token, strip its surrounding punctuation.
    std::size_t end = text.size();
    auto is_trim = [](unsigned char c) {
        return std::isspace(c) || c == '.' || c == ',' || c == '!' || c == '?' || c == ';' ||
               c == ':' || c == '"' || c == '\'' || c == ')' || c == ']' || c == '*';
    };
    while (end > 0 && is_trim(static_cast<unsigned char>(text[end - 1]))) --end;
    std::size_t start = end;
    while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1]))) --start;
    std::string word = text.substr(start, end - start);
    while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.front())))
        word.erase(word.begin());

    if (word == "yes") {
        j.prediction = core::Label::match;
        j.parse_ok = true;
    } else if (word == "no") {
        j.prediction = core::Label::mismatch;
        j.parse_ok = true;
    } else {
        j.prediction = core::Label::mismatch;  // fallback
        j.parse_ok = false;
    }
    return j;
}

}  // namespace flexsdr::prompt
