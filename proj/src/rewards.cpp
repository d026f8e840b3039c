#include "flexsdr/rewards.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace flexsdr::rewards {

RewardConfig RewardConfig::flexsdr(int max_shots) {
    return RewardConfig{0.3, 1.0, true, true, max_shots};
}

RewardConfig RewardConfig::flexreticr(int max_shots) {
    return RewardConfig{0.3, 1.0, false, true, max_shots};
}

RewardConfig RewardConfig::reticl(int max_shots) {
    return RewardConfig{1.0, 0.0, false, false, max_shots};
}

void RewardConfig::validate() const {
    if (!(gamma > 0.0) || gamma > 1.0)
        throw RewardError("gamma must be in (0, 1]");
    if (gamma == 1.0 && intermediate_rewards)
        throw RewardError("gamma = 1 is only valid with final-only rewards");
    if (omega < 0.0) throw RewardError("omega must be >= 0");
    if (max_shots < 1) throw RewardError("max_shots must be >= 1");
}

void check_trajectory(const Trajectory& traj, int max_shots) {
    if (traj.steps.empty()) throw RewardError("empty trajectory");
    if (traj.r0 != 1 && traj.r0 != -1)
        throw RewardError("r0 must be +-1 in trajectory " + traj.instance_id);

    int selects = 0;
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const StepRecord& s = traj.steps[t];
        const bool is_stop = s.action == kStopAction;
        if (is_stop && t + 1 != traj.steps.size())
            throw RewardError("stop must be the last step in trajectory " + traj.instance_id);
        if (!is_stop) ++selects;
        if (s.reward != 1 && s.reward != -1)
            throw RewardError("step reward must be +-1 in trajectory " + traj.instance_id);
        if (!is_stop && s.bonus != 0)
            throw RewardError("bonus on a non-stop step in trajectory " + traj.instance_id);
    }
    if (selects > max_shots)
        throw RewardError("trajectory " + traj.instance_id + " selects " +
                          std::to_string(selects) + " demos, max is " +
                          std::to_string(max_shots));
}

StopReward stop_reward(int prev_reward, double omega) {
    return StopReward{prev_reward, prev_reward, (1.0 + omega) * prev_reward};
}

std::vector<double> compute_returns(const Trajectory& traj, const RewardConfig& cfg) {
    check_trajectory(traj, cfg.max_shots);

    const std::size_t n = traj.steps.size();
    std::vector<double> returns(n);
    double next = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const StepRecord& s = traj.steps[i];
        double instant = 0.0;
        if (cfg.intermediate_rewards || i + 1 == n)
            instant = s.reward + cfg.omega * s.bonus;
        returns[i] = instant + cfg.gamma * next;
        next = returns[i];
    }
    return returns;
}

std::vector<std::vector<double>> advantages(const std::vector<std::vector<double>>& returns,
                                            const std::vector<std::vector<double>>& values) {
    if (returns.size() != values.size())
        throw RewardError("returns/values batch size mismatch");

    std::vector<std::vector<double>> adv(returns.size());
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        if (returns[i].size() != values[i].size())
            throw RewardError("returns/values length mismatch in batch item " +
                              std::to_string(i));
        adv[i].resize(returns[i].size());
        for (std::size_t t = 0; t < returns[i].size(); ++t) {
            adv[i][t] = returns[i][t] - values[i][t];
            sum += adv[i][t];
            ++count;
        }
    }
    if (count == 0) throw RewardError("empty advantage batch");

    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (const auto& row : adv)
        for (double a : row) var += (a - mean) * (a - mean);
    const double std_dev = std::sqrt(var / static_cast<double>(count));

    for (auto& row : adv)
        for (double& a : row) a = (a - mean) / (std_dev + 1e-8);
    return adv;
}

nlohmann::json trajectory_to_json(const Trajectory& traj) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : traj.steps) {
        steps.push_back(nlohmann::json{{"action", s.action},
                                       {"logprob", s.logprob},
                                       {"value", s.value},
                                       {"reward", s.reward},
                                       {"bonus", s.bonus}});
    }
    return nlohmann::json{
        {"instance_id", traj.instance_id},
        {"r0", traj.r0},
        {"steps", std::move(steps)},
        {"terminated_by", traj.terminated_by == TerminatedBy::stop ? "stop" : "max_len"},
    };
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory traj;
    traj.instance_id = j.at("instance_id").get<std::string>();
    traj.r0 = j.at("r0").get<int>();
    traj.terminated_by = j.at("terminated_by").get<std::string>() == "stop"
                             ? TerminatedBy::stop
                             : TerminatedBy::max_len;
    for (const auto& s : j.at("steps")) {
        traj.steps.push_back(StepRecord{
            s.at("action").get<int>(),
            s.at("logprob").get<double>(),
            s.at("value").get<double>(),
            s.at("reward").get<int>(),
            s.at("bonus").get<int>(),
        });
    }
    return traj;
}

}  // namespace flexsdr::rewards
