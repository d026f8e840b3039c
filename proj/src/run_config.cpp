#include "flexsdr/run_config.hpp"

#include "flexsdr/util.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace flexsdr::cli {

using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json RunConfig::to_json() const {
    json j;
    j["dataset"] = dataset;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    j["embedder"] = json{{"provider", embedder.provider},
                         {"dim", embedder.dim},
                         {"seed", embedder.seed},
                         {"table", embedder.table},
                         {"base_url", embedder.base_url},
                         {"model", embedder.model},
                         {"api_key_env", embedder.api_key_env},
                         {"cache_file", embedder.cache_file},
                         {"max_retries", embedder.max_retries},
                         {"backoff_ms", embedder.backoff_ms}};
    j["judge"] = json{{"kind", judge.kind},
                      {"noise_prob", judge.noise_prob},
                      {"seed", judge.seed},
                      {"base_url", judge.base_url},
                      {"model", judge.model},
                      {"api_key_env", judge.api_key_env},
                      {"temperature", judge.temperature},
                      {"cache_file", judge.cache_file},
                      {"max_retries", judge.max_retries},
                      {"backoff_ms", judge.backoff_ms}};
    j["train"] = json{{"algorithm", trainer::algorithm_name(train.algorithm)},
                      {"gamma", train.reward.gamma},
                      {"omega", train.reward.omega},
                      {"intermediate_rewards", train.reward.intermediate_rewards},
                      {"stop_enabled", train.reward.stop_enabled},
                      {"max_shots", train.reward.max_shots},
                      {"clip_eps", train.clip_eps},
                      {"ppo_epochs", train.ppo_epochs},
                      {"batch_size", train.batch_size},
                      {"learning_rate", train.learning_rate},
                      {"value_coef", train.value_coef},
                      {"entropy_coef", train.entropy_coef},
                      {"replay_capacity", train.replay_capacity},
                      {"replay_reuse", train.replay_reuse},
                      {"episodes", train.episodes},
                      {"seed", train.seed},
                      {"grad_clip_norm", train.grad_clip_norm},
                      {"hidden_dim", train.hidden_dim},
                      {"mask_selected", train.mask_selected},
                      {"checkpoint_interval", train.checkpoint_interval},
                      {"probe_interval", train.probe_interval},
                      {"probe_size", train.probe_size}};
    j["eval"] = json{{"retriever", eval.retriever},
                     {"k", eval.k},
                     {"checkpoint", eval.checkpoint},
                     {"split", eval.split},
                     {"stop", eval.stop},
                     {"csv", eval.csv},
                     {"failure_budget", eval.failure_budget}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    maybe(j, "dataset", cfg.dataset);
    maybe(j, "output_dir", cfg.output_dir);
    maybe(j, "seed", cfg.seed);
    cfg.propagate_seed();

    if (j.contains("embedder")) {
        const json& e = j.at("embedder");
        maybe(e, "provider", cfg.embedder.provider);
        maybe(e, "dim", cfg.embedder.dim);
        maybe(e, "seed", cfg.embedder.seed);
        maybe(e, "table", cfg.embedder.table);
        maybe(e, "base_url", cfg.embedder.base_url);
        maybe(e, "model", cfg.embedder.model);
        maybe(e, "api_key_env", cfg.embedder.api_key_env);
        maybe(e, "cache_file", cfg.embedder.cache_file);
        maybe(e, "max_retries", cfg.embedder.max_retries);
        maybe(e, "backoff_ms", cfg.embedder.backoff_ms);
    }
    if (j.contains("judge")) {
        const json& v = j.at("judge");
        maybe(v, "kind", cfg.judge.kind);
        maybe(v, "noise_prob", cfg.judge.noise_prob);
        maybe(v, "seed", cfg.judge.seed);
        maybe(v, "base_url", cfg.judge.base_url);
        maybe(v, "model", cfg.judge.model);
        maybe(v, "api_key_env", cfg.judge.api_key_env);
        maybe(v, "temperature", cfg.judge.temperature);
        maybe(v, "cache_file", cfg.judge.cache_file);
        maybe(v, "max_retries", cfg.judge.max_retries);
        maybe(v, "backoff_ms", cfg.judge.backoff_ms);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        if (t.contains("max_shots"))
            cfg.train.reward.max_shots = t.at("max_shots").get<int>();
        if (t.contains("algorithm"))
            cfg.train.apply_algorithm_preset(
                trainer::algorithm_from_name(t.at("algorithm").get<std::string>()));
        maybe(t, "gamma", cfg.train.reward.gamma);
        maybe(t, "omega", cfg.train.reward.omega);
        maybe(t, "intermediate_rewards", cfg.train.reward.intermediate_rewards);
        maybe(t, "stop_enabled", cfg.train.reward.stop_enabled);
        maybe(t, "clip_eps", cfg.train.clip_eps);
        maybe(t, "ppo_epochs", cfg.train.ppo_epochs);
        maybe(t, "batch_size", cfg.train.batch_size);
        maybe(t, "learning_rate", cfg.train.learning_rate);
        maybe(t, "value_coef", cfg.train.value_coef);
        maybe(t, "entropy_coef", cfg.train.entropy_coef);
        maybe(t, "replay_capacity", cfg.train.replay_capacity);
        maybe(t, "replay_reuse", cfg.train.replay_reuse);
        maybe(t, "episodes", cfg.train.episodes);
        maybe(t, "seed", cfg.train.seed);
        maybe(t, "grad_clip_norm", cfg.train.grad_clip_norm);
        maybe(t, "hidden_dim", cfg.train.hidden_dim);
        maybe(t, "mask_selected", cfg.train.mask_selected);
        maybe(t, "checkpoint_interval", cfg.train.checkpoint_interval);
        maybe(t, "probe_interval", cfg.train.probe_interval);
        maybe(t, "probe_size", cfg.train.probe_size);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        maybe(e, "retriever", cfg.eval.retriever);
        maybe(e, "k", cfg.eval.k);
        maybe(e, "checkpoint", cfg.eval.checkpoint);
        maybe(e, "split", cfg.eval.split);
        maybe(e, "stop", cfg.eval.stop);
        maybe(e, "csv", cfg.eval.csv);
        maybe(e, "failure_budget", cfg.eval.failure_budget);
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid config JSON in " + path.string() + ": " + e.what());
    }
    try {
        return from_json(j);
    } catch (const std::exception& e) {
        throw ConfigError("bad config " + path.string() + ": " + e.what());
    }
}

std::string RunConfig::hash() const { return util::sha256_hex(to_json().dump()); }

void RunConfig::propagate_seed() {
    embedder.seed = seed;
    judge.seed = seed;
    train.seed = seed;
}

std::unique_ptr<embed::Embedder> make_embedder(const EmbedderConfig& cfg) {
    if (cfg.provider == "synthetic") {
        if (!cfg.cache_file.empty())
            return std::make_unique<embed::CachedEmbedder>(
                std::make_shared<embed::SyntheticEmbedder>(cfg.seed, cfg.dim),
                std::make_shared<embed::EmbedCache>(cfg.cache_file));
        return std::make_unique<embed::SyntheticEmbedder>(cfg.seed, cfg.dim);
    }
    if (cfg.provider == "file") {
        if (cfg.table.empty()) throw ConfigError("file embedder requires \"table\"");
        return std::make_unique<embed::FileEmbedder>(cfg.table);
    }
    if (cfg.provider == "remote") {
        embed::RemoteEmbedConfig rc;
        rc.base_url = cfg.base_url;
        rc.model = cfg.model;
        rc.api_key_env = cfg.api_key_env;
        rc.dimension = cfg.dim;
        rc.max_retries = cfg.max_retries;
        rc.backoff_ms = cfg.backoff_ms;
        if (!cfg.cache_file.empty()) rc.cache_file = cfg.cache_file;
        return std::make_unique<embed::RemoteEmbedder>(rc);
    }
    throw ConfigError("unknown embedder provider \"" + cfg.provider +
                      "\" (valid: synthetic, file, remote)");
}

std::unique_ptr<judge::Judge> make_judge(const JudgeCliConfig& cfg) {
    if (cfg.kind == "simulated")
        return std::make_unique<judge::SimulatedJudge>(
            judge::SimJudgeConfig{cfg.noise_prob, cfg.seed});
    if (cfg.kind == "remote") {
        judge::RemoteJudgeConfig rc;
        rc.base_url = cfg.base_url;
        rc.model = cfg.model;
        rc.api_key_env = cfg.api_key_env;
        rc.temperature = cfg.temperature;
        rc.max_retries = cfg.max_retries;
        rc.backoff_ms = cfg.backoff_ms;
        auto remote = std::make_shared<judge::RemoteJudge>(rc);
        // A response cache is mandatory for remote judging; training
        // re-evaluates per step and caching bounds the cost.
        const std::string cache =
            cfg.cache_file.empty() ? "judge_cache.jsonl" : cfg.cache_file;
        return std::make_unique<judge::CachingJudge>(
            remote, std::make_shared<judge::JudgeCache>(cache));
    }
    throw ConfigError("unknown judge kind \"" + cfg.kind + "\" (valid: simulated, remote)");
}

}  // namespace flexsdr::cli
