#pragma once

#include "flexsdr/rewards.hpp"
#include "flexsdr/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexsdr::policy {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class PolicyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PolicyConfig {
    int embed_dim = 64;
    int hidden_dim = 128;
};

struct TensorView {
    std::string name;
    double* data;
    long rows, cols;
    long size() const { return rows * cols; }
};

struct ConstTensorView {
    std::string name;
    const double* data;
    long rows, cols;
    long size() const { return rows * cols; }
};

// All learnable tensors of the retrieval policy: the query fusion layer,
// a single-layer LSTM cell (gate row blocks: input, forget, candidate,
// output), the bilinear action scorer, the learnable stop embedding and a
// linear value head on the shared trunk.
struct PolicyParameters {
    int embed_dim = 0;   // d
    int hidden_dim = 0;  // H

    Mat w0;       // H x 2d
    Vec b0;       // H
    Mat lstm_wx;  // 4H x d
    Mat lstm_wh;  // 4H x H
    Vec lstm_b;   // 4H
    Mat wa;       // H x d
    Vec x_stop;   // d
    Vec value_w;  // H
    double value_b = 0.0;

    // Matrices uniform in (-1/sqrt(H), 1/sqrt(H)), biases zero, x_stop a
    // unit-normalized random vector; fully determined by the seed.
    static PolicyParameters init(const PolicyConfig& cfg, std::uint64_t seed);
    static PolicyParameters zeros_like(const PolicyParameters& other);

    std::vector<TensorView> tensors();
    std::vector<ConstTensorView> tensors() const;

    bool all_finite() const;
};

struct PolicyState {
    Vec h;
    Vec c;
    std::vector<int> selected;  // demo indices already taken this rollout
};

// Distribution over |bank| demos plus one trailing stop slot. Masked
// entries carry probability exactly 0.
struct ActionDistribution {
    Vec logits;                      // size n + 1
    Vec probs;                       // size n + 1
    std::vector<std::uint8_t> mask;  // 1 = legal
    int stop_index = 0;              // == n
};

// Softmax over unmasked entries only; masked probabilities are exactly 0.
Vec masked_softmax(const Vec& logits, const std::vector<std::uint8_t>& mask);

// h_0 = tanh(W0 [x_k ; x_q] + b0), c_0 = 0, nothing selected.
PolicyState fuse_query(const Vec& x_knowledge, const Vec& x_question,
                       const PolicyParameters& params);

// One LSTM cell step consuming a demo embedding; `selected` is untouched
// (the rollout owns it).
PolicyState advance_state(const PolicyState& state, const Vec& x_demo,
                          const PolicyParameters& params);

// Bilinear scores h^T Wa x over bank rows and the stop embedding. Already
// selected demos are masked out when mask_selected is set; the stop slot is
// masked when stop is not allowed. Throws when nothing is legal.
ActionDistribution score_actions(const PolicyState& state, const Mat& bank_embeddings,
                                 const PolicyParameters& params, bool stop_allowed,
                                 bool mask_selected = true);

double value_estimate(const PolicyState& state, const PolicyParameters& params);

struct SampledAction {
    int index;  // bank row, or dist.stop_index
    double logprob;
};

SampledAction sample_action(const ActionDistribution& dist, rng::SplitMix& rand);
SampledAction greedy_action(const ActionDistribution& dist);  // lowest index wins ties

// ---------------------------------------------------------------------------
// PPO loss and analytic gradients
// ---------------------------------------------------------------------------

// One trajectory plus everything needed to recompute its forward pass.
// Advantages are treated as constants of the optimization.
struct TrajectoryView {
    const Vec* x_knowledge = nullptr;
    const Vec* x_question = nullptr;
    const Mat* bank = nullptr;  // n x d
    const rewards::Trajectory* traj = nullptr;
    std::vector<double> returns;
    std::vector<double> advantages;
    bool stop_enabled = true;
    bool mask_selected = true;
};

struct PpoConfig {
    double clip_eps = 0.2;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
};

struct PpoStats {
    double loss = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double mean_ratio = 0.0;
    double clip_fraction = 0.0;
    long steps = 0;
};

// Recomputes log-probs, values and entropies for the stored actions,
// forms the clipped-surrogate PPO loss
//   L = -mean_t min(ratio_t A_t, clip(ratio_t) A_t)
//       + value_coef * mean_t (V_t - G_t)^2 - entropy_coef * mean_t H_t
// and, when `grads` is non-null, accumulates exact analytic gradients for
// every parameter tensor, backpropagating through the scorer, the value
// head, all LSTM steps and the fusion layer. Throws on a non-finite loss.
PpoStats ppo_forward_backward(const std::vector<TrajectoryView>& batch,
                              const PolicyParameters& params, const PpoConfig& cfg,
                              PolicyParameters* grads);

// ---------------------------------------------------------------------------
// PromptPG scorer: independent per-demo MLP trained with REINFORCE
// ---------------------------------------------------------------------------

struct PromptPgConfig {
    int embed_dim = 64;
    int hidden_dim = 128;
};

struct PromptPgParameters {
    int embed_dim = 0;
    int hidden_dim = 0;

    Mat w1;  // hidden x 3d
    Vec b1;  // hidden
    Vec w2;  // hidden
    double b2 = 0.0;

    static PromptPgParameters init(const PromptPgConfig& cfg, std::uint64_t seed);
    static PromptPgParameters zeros_like(const PromptPgParameters& other);

    std::vector<TensorView> tensors();
    std::vector<ConstTensorView> tensors() const;

    bool all_finite() const;
};

// score_i = w2 . tanh(W1 [x_k ; x_q ; x_i] + b1) + b2, softmax over demos.
Vec promptpg_scores(const Vec& x_knowledge, const Vec& x_question, const Mat& bank_embeddings,
                    const PromptPgParameters& params);

struct PromptPgTrajectory {
    std::string instance_id;
    std::vector<int> picks;  // distinct demo indices, prompt order
    int reward = 0;          // terminal +-1
};

struct PromptPgItem {
    const Vec* x_knowledge = nullptr;
    const Vec* x_question = nullptr;
    const Mat* bank = nullptr;
    const PromptPgTrajectory* traj = nullptr;
};

struct ReinforceStats {
    double loss = 0.0;
    double mean_reward = 0.0;
    long trajectories = 0;
};

// loss = -mean_b [ (sum_{i in picks} ln p_i) * (r - baseline) ] with the
// batch-mean reward as baseline; gradients through the softmax and MLP.
ReinforceStats reinforce_forward_backward(const std::vector<PromptPgItem>& batch,
                                          const PromptPgParameters& params,
                                          PromptPgParameters* grads);

// ---------------------------------------------------------------------------
// Checkpoints: JSON metadata header + shape-prefixed 64-bit float tensors
// ---------------------------------------------------------------------------

struct CheckpointInfo {
    int format_version = 0;
    std::string kind;  // "policy" or "promptpg"
    int embed_dim = 0;
    int hidden_dim = 0;
    bool bank_agnostic = true;
    std::string config_hash;
};

void save_checkpoint(const PolicyParameters& params, const std::filesystem::path& path,
                     const std::string& config_hash);
void save_checkpoint(const PromptPgParameters& params, const std::filesystem::path& path,
                     const std::string& config_hash);

// Reads only the header; used to dispatch on checkpoint kind.
CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

// expect_embed_dim > 0 enforces a shape check against the header.
PolicyParameters load_policy_checkpoint(const std::filesystem::path& path,
                                        int expect_embed_dim = 0, CheckpointInfo* info = nullptr);
PromptPgParameters load_promptpg_checkpoint(const std::filesystem::path& path,
                                            int expect_embed_dim = 0,
                                            CheckpointInfo* info = nullptr);

}  // namespace flexsdr::policy
