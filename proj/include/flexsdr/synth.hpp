#pragma once

#include "flexsdr/core.hpp"

#include <cstdint>

namespace flexsdr::synth {

// Seeded synthetic tagging task. Question and demonstration texts share
// hint tokens, so bag-of-token embeddings carry the signal a retriever
// needs; concepts differ in how many of their instances are solvable
// without demonstrations (a descending ramp whose mean matches
// zero_shot_fraction).
struct SynthConfig {
    int concepts = 8;
    int instances_per_concept = 100;
    double positive_ratio = 0.2;  // match:mismatch of about 1:4
    int demos_pos = 5;
    int demos_neg = 5;
    double zero_shot_fraction = 0.3;
    double two_hint_fraction = 0.35;  // difficulty mix among unsolvable instances
    double train_fraction = 0.5;
    std::uint64_t seed = 7;

    void validate() const;
};

core::Dataset generate(const SynthConfig& cfg);

}  // namespace flexsdr::synth
