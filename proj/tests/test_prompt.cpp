#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsdr/prompt.hpp"
#include "flexsdr/rng.hpp"
#include "support/test_util.hpp"

using namespace flexsdr;
using test_util::TempDir;

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
    std::size_t count = 0, pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

}  // namespace

TEST_CASE("zero-shot prompt has each section and instruction exactly once") {
    const std::string p = prompt::assemble_prompt("Fractions of a set", "What is 1/2 of 6?", {});
    const auto& t = prompt::PromptTemplate::defaults();
    CHECK(count_occurrences(p, "<Knowledge>:") == 1);
    CHECK(count_occurrences(p, "<Question>:") == 1);
    CHECK(count_occurrences(p, t.system_instruction) == 1);
    CHECK(count_occurrences(p, t.reasoning_instruction) == 1);
    CHECK(count_occurrences(p, t.response_format_instruction) == 1);
    CHECK(p.find("Fractions of a set") != std::string::npos);
    CHECK(p.find("What is 1/2 of 6?") != std::string::npos);
}

TEST_CASE("demo order changes the prompt bytes") {
    const auto d1 = test_util::make_demo("d1", "k", "first question", 1);
    const auto d2 = test_util::make_demo("d2", "k", "second question", 0);
    const std::string a = prompt::assemble_prompt("K", "Q", {d1, d2});
    const std::string b = prompt::assemble_prompt("K", "Q", {d2, d1});
    CHECK(a != b);
}

TEST_CASE("assembly is deterministic") {
    const auto d1 = test_util::make_demo("d1", "k", "q", 1);
    CHECK(prompt::assemble_prompt("K", "Q", {d1}) == prompt::assemble_prompt("K", "Q", {d1}));
}

TEST_CASE("prompt length grows with each added demo") {
    std::vector<core::Demonstration> demos;
    std::size_t prev = prompt::assemble_prompt("K", "Q", demos).size();
    for (int i = 0; i < 5; ++i) {
        demos.push_back(test_util::make_demo("d" + std::to_string(i), "k",
                                             "question " + std::to_string(i), i % 2));
        const std::size_t len = prompt::assemble_prompt("K", "Q", demos).size();
        CHECK(len > prev);
        prev = len;
    }
}

TEST_CASE("parse_judgment reads the trailing token") {
    const auto j = prompt::parse_judgment("The question covers the concept... <Yes>");
    CHECK(j.prediction == core::Label::match);
    CHECK(j.parse_ok);
}

TEST_CASE("parse_judgment falls back to mismatch") {
    const auto j = prompt::parse_judgment("No explicit token here");
    CHECK(j.prediction == core::Label::mismatch);
    CHECK_FALSE(j.parse_ok);
}

TEST_CASE("last token wins") {
    const auto j = prompt::parse_judgment("First <No> because ... but finally <Yes>");
    CHECK(j.prediction == core::Label::match);
    CHECK(j.parse_ok);

    const auto j2 = prompt::parse_judgment("First <Yes> ... on reflection <No>");
    CHECK(j2.prediction == core::Label::mismatch);
    CHECK(j2.parse_ok);
}

TEST_CASE("bare final word counts, case-insensitively") {
    CHECK(prompt::parse_judgment("I think the answer is yes.").prediction ==
          core::Label::match);
    CHECK(prompt::parse_judgment("I think the answer is yes.").parse_ok);
    CHECK(prompt::parse_judgment("Definitely NO").prediction == core::Label::mismatch);
    CHECK(prompt::parse_judgment("definitely no!").parse_ok);
    CHECK(prompt::parse_judgment("<YES>").prediction == core::Label::match);
}

TEST_CASE("empty and token-free strings fall back") {
    CHECK_FALSE(prompt::parse_judgment("").parse_ok);
    CHECK(prompt::parse_judgment("").prediction == core::Label::mismatch);
}

// Property: every rendered demo block parses back to its own label.
TEST_CASE("demo blocks echo their judgment token") {
    rng::SplitMix rand(314);
    for (int i = 0; i < 200; ++i) {
        const int label = static_cast<int>(rand.next_below(2));
        std::string question = "q";
        for (int w = 0; w < static_cast<int>(rand.next_below(10)); ++w)
            question += " tok" + std::to_string(rand.next_below(1000));
        const auto d = test_util::make_demo("d", "k", question, label,
                                            "reason " + std::to_string(rand.next_below(50)));
        const auto j = prompt::parse_judgment(prompt::render_demo_block(d));
        CHECK(j.parse_ok);
        CHECK(j.prediction == d.label);
    }
}

TEST_CASE("template overrides load from section files") {
    TempDir dir("prompt");
    test_util::write_lines(dir.file("tmpl.txt"),
                           "[system_instruction]\n"
                           "Custom system line.\n"
                           "[query_block]\n"
                           "<Knowledge>: {knowledge}\n"
                           "<Question>: {question}\n"
                           "Answer now.\n");
    const auto t = prompt::PromptTemplate::load(dir.file("tmpl.txt"));
    CHECK(t.system_instruction == "Custom system line.");
    CHECK(t.reasoning_instruction ==
          prompt::PromptTemplate::defaults().reasoning_instruction);
    const std::string p = prompt::assemble_prompt("K", "Q", {}, t);
    CHECK(p.find("Custom system line.") != std::string::npos);
    CHECK(p.find("Answer now.") != std::string::npos);
}

TEST_CASE("unknown template sections are rejected") {
    TempDir dir("prompt");
    test_util::write_lines(dir.file("bad.txt"), "[nonsense]\nx\n");
    CHECK_THROWS_WITH(prompt::PromptTemplate::load(dir.file("bad.txt")),
                      doctest::Contains("nonsense"));
}
