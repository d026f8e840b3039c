#pragma once

#include <nlohmann/json_fwd.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace flexsdr::rewards {

class RewardError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Reward shaping knobs. The algorithm presets are expressed entirely here:
//   flexsdr    — discounted step-wise rewards plus a weighted stop bonus;
//   flexreticr — stop kept, intermediate rewards zeroed (final step only);
//   reticl     — fixed-length selection, undiscounted final reward only.
struct RewardConfig {
    double gamma = 0.3;               // discount, in (0, 1]
    double omega = 1.0;               // stop-bonus weight, >= 0
    bool intermediate_rewards = true;
    bool stop_enabled = true;
    int max_shots = 4;                // T

    static RewardConfig flexsdr(int max_shots = 4);
    static RewardConfig flexreticr(int max_shots = 4);
    static RewardConfig reticl(int max_shots = 4);

    void validate() const;  // gamma = 1 only with final-only rewards
};

// Action encoding inside a trajectory step: a demonstration index, or stop.
inline constexpr int kStopAction = -1;

struct StepRecord {
    int action = kStopAction;  // demo index in the bank, or kStopAction
    double logprob = 0.0;      // behavior log-probability at rollout time
    double value = 0.0;        // critic estimate at rollout time
    int reward = 0;            // r_t in {-1, +1}
    int bonus = 0;             // r'_t; nonzero only on the stop step
};

enum class TerminatedBy { stop, max_len };

struct Trajectory {
    std::string instance_id;
    int r0 = 0;  // zero-shot correctness reward, +-1
    std::vector<StepRecord> steps;
    TerminatedBy terminated_by = TerminatedBy::max_len;
};

// Throws RewardError when structural invariants are broken (stop not last,
// too many selections, out-of-range rewards, bonus off a stop step).
void check_trajectory(const Trajectory& traj, int max_shots);

// On a stop action the step replays the most recent reward and grants the
// bonus: the step's instant contribution is reward + omega * bonus.
struct StopReward {
    int reward;           // r_t = r_{t-1}
    int bonus;            // r'_t = r_{t-1}
    double contribution;  // (1 + omega) * r_{t-1}
};
StopReward stop_reward(int prev_reward, double omega);

// Discounted per-step returns G_t. With intermediate rewards the instant
// term is (r_t + omega * r'_t) at every step; otherwise only the final
// step contributes. G_t = instant_t + gamma * G_{t+1}.
std::vector<double> compute_returns(const Trajectory& traj, const RewardConfig& cfg);

// A_t = G_t - V_t, normalized to mean 0 / std 1 across the whole batch
// (population std, epsilon guard 1e-8). Shapes must match pairwise.
std::vector<std::vector<double>> advantages(const std::vector<std::vector<double>>& returns,
                                            const std::vector<std::vector<double>>& values);

// JSON round-trip for the replay-buffer spill file.
nlohmann::json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace flexsdr::rewards
