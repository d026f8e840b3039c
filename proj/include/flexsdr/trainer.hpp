#pragma once

#include "flexsdr/core.hpp"
#include "flexsdr/embed.hpp"
#include "flexsdr/judge.hpp"
#include "flexsdr/policy.hpp"
#include "flexsdr/rewards.hpp"
#include "flexsdr/rng.hpp"

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flexsdr::trainer {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Algorithm { flexsdr, flexreticr, reticl, promptpg };

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

struct TrainConfig {
    rewards::RewardConfig reward;
    Algorithm algorithm = Algorithm::flexsdr;

    double clip_eps = 0.2;
    int ppo_epochs = 4;
    int batch_size = 16;
    double learning_rate = 1e-3;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int replay_capacity = 256;
    int replay_reuse = 2;  // max times a buffered trajectory is replayed
    int episodes = 500;
    std::uint64_t seed = 7;
    double grad_clip_norm = 1.0;

    int hidden_dim = 128;
    bool mask_selected = true;  // forbid re-selecting a demo (ablation flag)
    int checkpoint_interval = 100;
    int probe_interval = 10;
    int probe_size = 32;
    std::filesystem::path replay_spill_file;  // empty = no spill

    // Rewrites the reward block to the named preset, keeping max_shots.
    void apply_algorithm_preset(Algorithm a);
    void validate() const;
};

// Embeddings resolved once per run; keyed by knowledge id, instance id and
// knowledge id respectively. Bank rows follow bank order (action indices).
struct EmbeddedTask {
    std::map<std::string, policy::Vec> knowledge;
    std::map<std::string, policy::Vec> question;
    std::map<std::string, policy::Mat> bank;
};

EmbeddedTask embed_task(const core::Dataset& dataset, embed::Embedder& embedder);

// One sampled trajectory: zero-shot judge call for r0, then up to T steps
// of score/sample/select with a judge call after every selection; a stop
// action records the stop reward and terminates.
rewards::Trajectory rollout(const policy::PolicyParameters& params,
                            const core::TaggingInstance& instance,
                            const core::DemonstrationBank& bank, const EmbeddedTask& task,
                            judge::Judge& judge_fn, const rewards::RewardConfig& cfg,
                            rng::SplitMix& rand, bool mask_selected = true);

// Greedy decode (no sampling, no judge calls); returns selected demo indices.
std::vector<int> greedy_selection(const policy::PolicyParameters& params,
                                  const policy::Vec& x_knowledge, const policy::Vec& x_question,
                                  const policy::Mat& bank, int max_shots, bool stop_enabled,
                                  bool mask_selected = true);

policy::PpoStats ppo_loss(const std::vector<policy::TrajectoryView>& batch,
                          const policy::PolicyParameters& params, const TrainConfig& cfg);

// Bounded FIFO of trajectories; each entry is handed out at most
// `max_reuse` times, then dropped.
class ReplayBuffer {
public:
    ReplayBuffer(int capacity, int max_reuse);

    void push(rewards::Trajectory traj);
    std::vector<rewards::Trajectory> sample(int count, rng::SplitMix& rand);
    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        rewards::Trajectory traj;
        int uses = 0;
    };
    std::deque<Entry> entries_;
    int capacity_;
    int max_reuse_;
};

// Adam over flat tensor views; moment state is part of the rollback
// snapshot the trainer takes per episode.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8);

    void step(std::vector<policy::TensorView> params, std::vector<policy::ConstTensorView> grads);

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

    struct Snapshot {
        long t;
        std::vector<double> m, v;
    };
    Snapshot snapshot() const { return {t_, m_, v_}; }
    void restore(const Snapshot& s) {
        t_ = s.t;
        m_ = s.m;
        v_ = s.v;
    }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

double global_norm(const std::vector<policy::ConstTensorView>& tensors);
void scale_tensors(std::vector<policy::TensorView> tensors, double factor);

struct TrainResult {
    std::filesystem::path checkpoint_file;
    std::filesystem::path log_file;
    int episodes_run = 0;
    std::optional<policy::PolicyParameters> policy_params;
    std::optional<policy::PromptPgParameters> promptpg_params;
};

// Runs the configured algorithm, writing checkpoints and a JSON-lines
// training log under out_dir. Fully deterministic for a fixed config and a
// deterministic judge.
TrainResult train(const core::Dataset& dataset, embed::Embedder& embedder, judge::Judge& judge_fn,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const std::string& config_hash);

}  // namespace flexsdr::trainer
