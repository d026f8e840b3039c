#pragma once

// Shared helpers for the test binaries.

#include "flexsdr/core.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace test_util {

// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() /
                ("flexsdr-" + tag + "-" + std::to_string(gen()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path file(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_lines(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

inline flexsdr::core::Demonstration make_demo(const std::string& id, const std::string& kid,
                                              const std::string& question, int label,
                                              const std::string& reason = "because",
                                              std::set<int> hints = {}) {
    flexsdr::core::Demonstration d;
    d.id = id;
    d.knowledge_id = kid;
    d.question_text = question;
    d.label = flexsdr::core::label_from_int(label);
    d.reason_text = reason;
    d.hints = std::move(hints);
    return d;
}

inline flexsdr::core::TaggingInstance make_instance(
    const std::string& id, const std::string& kid, const std::string& ktext,
    const std::string& qtext, int label, flexsdr::core::Split split,
    bool zero_shot_solvable = false, std::set<int> required = {}) {
    flexsdr::core::TaggingInstance inst;
    inst.id = id;
    inst.knowledge_id = kid;
    inst.knowledge_text = ktext;
    inst.question_text = qtext;
    inst.label = flexsdr::core::label_from_int(label);
    inst.split = split;
    flexsdr::core::SimMeta meta;
    meta.zero_shot_solvable = zero_shot_solvable;
    meta.required_hints = std::move(required);
    inst.sim_meta = meta;
    return inst;
}

}  // namespace test_util
