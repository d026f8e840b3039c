#pragma once

#include "flexsdr/core.hpp"
#include "flexsdr/prompt.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexsdr::judge {

class JudgeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The environment: maps (instance, demonstrations) to a binary judgment.
class Judge {
public:
    virtual ~Judge() = default;
    virtual prompt::Judgment judge(const core::TaggingInstance& instance,
                                   const std::vector<core::Demonstration>& demos) = 0;
};

// +1 when the judgment agrees with the gold label, -1 otherwise.
int eval_reward(const prompt::Judgment& j, core::Label gold);

struct SimJudgeConfig {
    double noise_prob = 0.0;  // in [0, 1)
    std::uint64_t seed = 0;
};

// Deterministic oracle: the judgment is correct iff the instance is
// zero-shot solvable or the union of demo hints covers its required hints.
// Optional noise flips correctness; the flip is a pure function of
// (seed, instance id, sorted demo ids) so calls are order-independent.
class SimulatedJudge final : public Judge {
public:
    explicit SimulatedJudge(SimJudgeConfig cfg);

    prompt::Judgment judge(const core::TaggingInstance& instance,
                           const std::vector<core::Demonstration>& demos) override;

private:
    SimJudgeConfig cfg_;
};

struct RemoteJudgeConfig {
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env;
    double temperature = 0.0;
    int max_retries = 3;
    int backoff_ms = 100;
    int timeout_s = 60;
    int max_in_flight = 4;
};

// Chat-completions judge: assembles the few-shot prompt, posts it, parses
// the response token. Network failure after bounded retries throws; no
// judgment is ever fabricated.
class RemoteJudge final : public Judge {
public:
    RemoteJudge(RemoteJudgeConfig cfg, prompt::PromptTemplate tmpl = prompt::PromptTemplate::defaults());
    ~RemoteJudge() override;

    prompt::Judgment judge(const core::TaggingInstance& instance,
                           const std::vector<core::Demonstration>& demos) override;

private:
    RemoteJudgeConfig cfg_;
    prompt::PromptTemplate tmpl_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Disk-backed judgment cache keyed by a request digest.
class JudgeCache {
public:
    explicit JudgeCache(const std::filesystem::path& file);

    bool get(const std::string& key, prompt::Judgment* out) const;
    void put(const std::string& key, const prompt::Judgment& j);

private:
    std::filesystem::path file_;
    std::map<std::string, prompt::Judgment> entries_;
    mutable std::mutex mu_;
};

// Write-through wrapper; identical calls hit the inner judge once. The key
// digests the full request (instance identity, gold label, prompt bytes).
class CachingJudge final : public Judge {
public:
    CachingJudge(std::shared_ptr<Judge> inner, std::shared_ptr<JudgeCache> cache,
                 prompt::PromptTemplate tmpl = prompt::PromptTemplate::defaults());

    prompt::Judgment judge(const core::TaggingInstance& instance,
                           const std::vector<core::Demonstration>& demos) override;

private:
    std::shared_ptr<Judge> inner_;
    std::shared_ptr<JudgeCache> cache_;
    prompt::PromptTemplate tmpl_;
};

}  // namespace flexsdr::judge
