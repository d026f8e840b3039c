#pragma once

#include "flexsdr/embed.hpp"
#include "flexsdr/judge.hpp"
#include "flexsdr/trainer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

namespace flexsdr::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EmbedderConfig {
    std::string provider = "synthetic";  // synthetic | file | remote
    int dim = 64;
    std::uint64_t seed = 7;
    std::string table;  // file provider
    std::string base_url;
    std::string model;
    std::string api_key_env = "FLEXSDR_EMBED_API_KEY";
    std::string cache_file;
    int max_retries = 3;
    int backoff_ms = 100;
};

struct JudgeCliConfig {
    std::string kind = "simulated";  // simulated | remote
    double noise_prob = 0.0;
    std::uint64_t seed = 7;
    std::string base_url;
    std::string model;
    std::string api_key_env = "FLEXSDR_JUDGE_API_KEY";
    double temperature = 0.0;
    std::string cache_file;
    int max_retries = 3;
    int backoff_ms = 100;
};

struct EvalOptions {
    std::string retriever = "zero-shot";
    int k = 4;
    std::string checkpoint;
    std::string split = "test";  // train | test
    bool stop = true;            // stop slot offered to policy retrievers
    bool csv = false;
    int failure_budget = 0;
};

// Fully resolved run configuration; echoed verbatim into every artifact.
struct RunConfig {
    std::string dataset;
    std::string output_dir = "runs";
    std::uint64_t seed = 7;
    EmbedderConfig embedder;
    JudgeCliConfig judge;
    trainer::TrainConfig train;
    EvalOptions eval;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    // SHA-256 of the canonical JSON dump; embedded in every artifact.
    std::string hash() const;

    // Pushes the top-level seed into the embedder/judge/train sub-seeds.
    void propagate_seed();
};

std::unique_ptr<embed::Embedder> make_embedder(const EmbedderConfig& cfg);
std::unique_ptr<judge::Judge> make_judge(const JudgeCliConfig& cfg);

}  // namespace flexsdr::cli
