#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexsdr::core {

using EmbeddingVector = Eigen::VectorXd;

// Binary tagging judgment: does the question exercise the knowledge concept?
enum class Label : int { mismatch = 0, match = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }
inline Label flip(Label l) { return l == Label::match ? Label::mismatch : Label::match; }

Label label_from_int(int v);  // throws on anything but 0/1

enum class Split { train, test, demo };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

// Metadata driving the simulated judge; absent for datasets that can only
// be evaluated against remote judges.
struct SimMeta {
    bool zero_shot_solvable = false;
    std::set<int> required_hints;

    bool operator==(const SimMeta&) const = default;
};

struct TaggingInstance {
    std::string id;
    std::string knowledge_id;
    std::string knowledge_text;
    std::string question_text;
    Label label = Label::mismatch;
    Split split = Split::train;
    std::optional<SimMeta> sim_meta;

    bool operator==(const TaggingInstance&) const = default;
};

// A labeled worked example placed in the prompt. `hints` exists only for
// the simulated judge; `embedding` is filled by the embed providers on
// demand and never stored in dataset files.
struct Demonstration {
    std::string id;
    std::string knowledge_id;
    std::string question_text;
    Label label = Label::mismatch;
    std::string reason_text;
    std::set<int> hints;
    std::optional<EmbeddingVector> embedding;

    bool operator==(const Demonstration& o) const;
};

// Per-concept pool of candidate demonstrations; list order defines the
// action indices, so it must stay stable across load/save.
struct DemonstrationBank {
    std::string knowledge_id;
    std::vector<Demonstration> demonstrations;

    bool operator==(const DemonstrationBank&) const = default;
};

struct Dataset {
    std::vector<TaggingInstance> instances;
    std::map<std::string, DemonstrationBank> banks;

    bool operator==(const Dataset&) const = default;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reads a JSON-lines dataset file. Records with split "demo" become bank
// entries in file order; everything else becomes a TaggingInstance.
// Throws DatasetError naming the offending line and field.
Dataset load_dataset(const std::filesystem::path& path);

// Inverse of load_dataset: instances first, then banks in key order with
// their internal ordering preserved.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

// Non-throwing invariant sweep; empty result means the dataset is sound.
// Diagnostics reference record ids.
std::vector<std::string> validate_dataset(const Dataset& ds);

}  // namespace flexsdr::core
