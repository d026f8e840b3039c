#include "flexsdr/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace flexsdr::trainer {

using nlohmann::json;
using policy::Mat;
using policy::Vec;

std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::flexsdr: return "flexsdr";
        case Algorithm::flexreticr: return "flexreticr";
        case Algorithm::reticl: return "reticl";
        case Algorithm::promptpg: return "promptpg";
    }
    throw std::logic_error("unreachable algorithm");
}

Algorithm algorithm_from_name(const std::string& name) {
    if (name == "flexsdr") return Algorithm::flexsdr;
    if (name == "flexreticr") return Algorithm::flexreticr;
    if (name == "reticl") return Algorithm::reticl;
    if (name == "promptpg") return Algorithm::promptpg;
    throw TrainError("unknown algorithm \"" + name +
                     "\" (valid: flexsdr, flexreticr, reticl, promptpg)");
}

void TrainConfig::apply_algorithm_preset(Algorithm a) {
    algorithm = a;
    const int t = reward.max_shots;
    switch (a) {
        case Algorithm::flexsdr: reward = rewards::RewardConfig::flexsdr(t); break;
        case Algorithm::flexreticr: reward = rewards::RewardConfig::flexreticr(t); break;
        case Algorithm::reticl: reward = rewards::RewardConfig::reticl(t); break;
        case Algorithm::promptpg:
            // Fixed shot count, terminal reward; the reward block's discount
            // and stop fields are ignored by the REINFORCE path.
            reward.stop_enabled = false;
            reward.intermediate_rewards = false;
            reward.gamma = 1.0;
            reward.omega = 0.0;
            break;
    }
}

void TrainConfig::validate() const {
    if (algorithm != Algorithm::promptpg) reward.validate();
    if (clip_eps <= 0.0) throw TrainError("clip_eps must be > 0");
    if (learning_rate <= 0.0) throw TrainError("learning_rate must be > 0");
    if (batch_size < 1) throw TrainError("batch_size must be >= 1");
    if (ppo_epochs < 1) throw TrainError("ppo_epochs must be >= 1");
    if (episodes < 0) throw TrainError("episodes must be >= 0");
    if (replay_capacity < 0) throw TrainError("replay_capacity must be >= 0");
    if (replay_reuse < 0) throw TrainError("replay_reuse must be >= 0");
    if (hidden_dim < 1) throw TrainError("hidden_dim must be >= 1");
    if (grad_clip_norm <= 0.0) throw TrainError("grad_clip_norm must be > 0");
}

EmbeddedTask embed_task(const core::Dataset& dataset, embed::Embedder& embedder) {
    EmbeddedTask task;
    for (const auto& inst : dataset.instances) {
        if (!task.knowledge.contains(inst.knowledge_id))
            task.knowledge[inst.knowledge_id] = embedder.embed(inst.knowledge_text);
        task.question[inst.id] = embedder.embed(inst.question_text);
    }
    for (const auto& [kid, bank] : dataset.banks) {
        Mat rows(static_cast<long>(bank.demonstrations.size()), embedder.dimension());
        for (std::size_t i = 0; i < bank.demonstrations.size(); ++i)
            rows.row(static_cast<long>(i)) =
                embedder.embed(bank.demonstrations[i].question_text).transpose();
        task.bank[kid] = std::move(rows);
    }
    return task;
}

namespace {

const Vec& require_vec(const std::map<std::string, Vec>& m, const std::string& key,
                       const char* what) {
    auto it = m.find(key);
    if (it == m.end()) throw TrainError(std::string("no embedding for ") + what + " " + key);
    return it->second;
}

const Mat& require_bank(const EmbeddedTask& task, const std::string& kid) {
    auto it = task.bank.find(kid);
    if (it == task.bank.end()) throw TrainError("no bank embeddings for knowledge " + kid);
    return it->second;
}

}  // namespace

rewards::Trajectory rollout(const policy::PolicyParameters& params,
                            const core::TaggingInstance& instance,
                            const core::DemonstrationBank& bank, const EmbeddedTask& task,
                            judge::Judge& judge_fn, const rewards::RewardConfig& cfg,
                            rng::SplitMix& rand, bool mask_selected) {
    if (bank.demonstrations.empty())
        throw TrainError("rollout over empty bank " + bank.knowledge_id);

    const Vec& xk = require_vec(task.knowledge, instance.knowledge_id, "knowledge");
    const Vec& xq = require_vec(task.question, instance.id, "question");
    const Mat& bank_x = require_bank(task, instance.knowledge_id);
    const long n = bank_x.rows();

    rewards::Trajectory traj;
    traj.instance_id = instance.id;
    traj.terminated_by = rewards::TerminatedBy::max_len;
    traj.r0 = judge::eval_reward(judge_fn.judge(instance, {}), instance.label);

    policy::PolicyState state = policy::fuse_query(xk, xq, params);
    std::vector<core::Demonstration> chosen;
    int prev_reward = traj.r0;

    for (int t = 0; t < cfg.max_shots; ++t) {
        if (mask_selected && !cfg.stop_enabled &&
            static_cast<long>(state.selected.size()) >= n)
            break;  // bank exhausted with no stop available

        policy::ActionDistribution dist =
            policy::score_actions(state, bank_x, params, cfg.stop_enabled, mask_selected);
        const policy::SampledAction act = policy::sample_action(dist, rand);
        const double value = policy::value_estimate(state, params);

        if (act.index == dist.stop_index) {
            const rewards::StopReward sr = rewards::stop_reward(prev_reward, cfg.omega);
            traj.steps.push_back({rewards::kStopAction, act.logprob, value, sr.reward, sr.bonus});
            traj.terminated_by = rewards::TerminatedBy::stop;
            break;
        }

        state.selected.push_back(act.index);
        chosen.push_back(bank.demonstrations[static_cast<std::size_t>(act.index)]);
        const prompt::Judgment j = judge_fn.judge(instance, chosen);
        const int reward = judge::eval_reward(j, instance.label);
        traj.steps.push_back({act.index, act.logprob, value, reward, 0});
        prev_reward = reward;

        if (t + 1 < cfg.max_shots)
            state = policy::advance_state(state, bank_x.row(act.index).transpose(), params);
    }
    return traj;
}

std::vector<int> greedy_selection(const policy::PolicyParameters& params, const Vec& x_knowledge,
                                  const Vec& x_question, const Mat& bank, int max_shots,
                                  bool stop_enabled, bool mask_selected) {
    policy::PolicyState state = policy::fuse_query(x_knowledge, x_question, params);
    std::vector<int> picks;
    const long n = bank.rows();

    for (int t = 0; t < max_shots; ++t) {
        if (!stop_enabled && static_cast<long>(picks.size()) >= n) break;
        policy::ActionDistribution dist =
            policy::score_actions(state, bank, params, stop_enabled, mask_selected);
        const policy::SampledAction act = policy::greedy_action(dist);
        if (act.index == dist.stop_index) break;
        picks.push_back(act.index);
        state.selected.push_back(act.index);
        if (t + 1 < max_shots)
            state = policy::advance_state(state, bank.row(act.index).transpose(), params);
    }
    return picks;
}

policy::PpoStats ppo_loss(const std::vector<policy::TrajectoryView>& batch,
                          const policy::PolicyParameters& params, const TrainConfig& cfg) {
    policy::PpoConfig pc{cfg.clip_eps, cfg.value_coef, cfg.entropy_coef};
    return policy::ppo_forward_backward(batch, params, pc, nullptr);
}

ReplayBuffer::ReplayBuffer(int capacity, int max_reuse)
    : capacity_(capacity), max_reuse_(max_reuse) {}

void ReplayBuffer::push(rewards::Trajectory traj) {
    if (capacity_ == 0 || max_reuse_ == 0) return;
    entries_.push_back({std::move(traj), 0});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

std::vector<rewards::Trajectory> ReplayBuffer::sample(int count, rng::SplitMix& rand) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].uses < max_reuse_) eligible.push_back(i);

    const int take = std::min<int>(count, static_cast<int>(eligible.size()));
    // Partial Fisher-Yates over the eligible index list.
    for (int i = 0; i < take; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(rand.next_below(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }

    std::vector<rewards::Trajectory> out;
    out.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) {
        Entry& e = entries_[eligible[static_cast<std::size_t>(i)]];
        ++e.uses;
        out.push_back(e.traj);
    }
    // Drop exhausted entries, preserving FIFO order of the rest.
    std::erase_if(entries_, [&](const Entry& e) { return e.uses >= max_reuse_; });
    return out;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamOptimizer::step(std::vector<policy::TensorView> params,
                         std::vector<policy::ConstTensorView> grads) {
    long total = 0;
    for (const auto& t : params) total += t.size();
    if (m_.empty()) {
        m_.assign(static_cast<std::size_t>(total), 0.0);
        v_.assign(static_cast<std::size_t>(total), 0.0);
    }
    if (static_cast<long>(m_.size()) != total)
        throw TrainError("optimizer state does not match parameter count");

    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));

    std::size_t k = 0;
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        double* p = params[ti].data;
        const double* g = grads[ti].data;
        const long sz = params[ti].size();
        for (long i = 0; i < sz; ++i, ++k) {
            m_[k] = b1_ * m_[k] + (1.0 - b1_) * g[i];
            v_[k] = b2_ * v_[k] + (1.0 - b2_) * g[i] * g[i];
            const double mhat = m_[k] / bc1;
            const double vhat = v_[k] / bc2;
            p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

double global_norm(const std::vector<policy::ConstTensorView>& tensors) {
    double sq = 0.0;
    for (const auto& t : tensors)
        for (long i = 0; i < t.size(); ++i) sq += t.data[i] * t.data[i];
    return std::sqrt(sq);
}

void scale_tensors(std::vector<policy::TensorView> tensors, double factor) {
    for (auto& t : tensors)
        for (long i = 0; i < t.size(); ++i) t.data[i] *= factor;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct TaskIndex {
    std::vector<const core::TaggingInstance*> train_split;
    std::vector<const core::TaggingInstance*> probe;
    std::map<std::string, const core::TaggingInstance*> by_id;
};

TaskIndex build_index(const core::Dataset& dataset, int probe_size) {
    TaskIndex idx;
    std::vector<const core::TaggingInstance*> test_split;
    for (const auto& inst : dataset.instances) {
        idx.by_id[inst.id] = &inst;
        if (inst.split == core::Split::train) idx.train_split.push_back(&inst);
        if (inst.split == core::Split::test) test_split.push_back(&inst);
    }
    const auto& probe_pool = test_split.empty() ? idx.train_split : test_split;
    const int take = std::min<int>(probe_size, static_cast<int>(probe_pool.size()));
    idx.probe.assign(probe_pool.begin(), probe_pool.begin() + take);
    return idx;
}

std::vector<const core::TaggingInstance*> sample_batch(
    const std::vector<const core::TaggingInstance*>& pool, int batch_size,
    rng::SplitMix& rand) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const int take = std::min<int>(batch_size, static_cast<int>(pool.size()));
    for (int i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rand.next_below(order.size() - i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    std::vector<const core::TaggingInstance*> out;
    out.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) out.push_back(pool[order[static_cast<std::size_t>(i)]]);
    return out;
}

int count_selects(const rewards::Trajectory& traj) {
    int n = 0;
    for (const auto& s : traj.steps)
        if (s.action != rewards::kStopAction) ++n;
    return n;
}

std::string episode_checkpoint_name(int episode) {
    std::ostringstream ss;
    ss << "checkpoint-" << std::setfill('0') << std::setw(6) << episode << ".bin";
    return ss.str();
}

double probe_accuracy_policy(const policy::PolicyParameters& params, const TaskIndex& idx,
                             const core::Dataset& dataset, const EmbeddedTask& task,
                             judge::Judge& judge_fn, const TrainConfig& cfg) {
    if (idx.probe.empty()) return 0.0;
    int correct = 0;
    for (const auto* inst : idx.probe) {
        const auto bank_it = dataset.banks.find(inst->knowledge_id);
        if (bank_it == dataset.banks.end()) continue;
        const Vec& xk = require_vec(task.knowledge, inst->knowledge_id, "knowledge");
        const Vec& xq = require_vec(task.question, inst->id, "question");
        const std::vector<int> picks =
            greedy_selection(params, xk, xq, require_bank(task, inst->knowledge_id),
                             cfg.reward.max_shots, cfg.reward.stop_enabled, cfg.mask_selected);
        std::vector<core::Demonstration> demos;
        for (int p : picks)
            demos.push_back(bank_it->second.demonstrations[static_cast<std::size_t>(p)]);
        if (judge_fn.judge(*inst, demos).prediction == inst->label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.probe.size());
}

std::vector<int> sample_without_replacement(const Vec& probs, int k, rng::SplitMix& rand) {
    // Sequential draws with renormalization over the remaining entries.
    std::vector<int> picks;
    std::vector<std::uint8_t> taken(static_cast<std::size_t>(probs.size()), 0);
    double remaining = probs.sum();
    const int take = std::min<int>(k, static_cast<int>(probs.size()));
    for (int round = 0; round < take; ++round) {
        const double u = rand.next_unit() * remaining;
        double cum = 0.0;
        int chosen = -1;
        for (long i = 0; i < probs.size(); ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            chosen = static_cast<int>(i);
            cum += probs[i];
            if (u < cum) break;
        }
        taken[static_cast<std::size_t>(chosen)] = 1;
        remaining -= probs[chosen];
        picks.push_back(chosen);
    }
    return picks;
}

TrainResult train_promptpg(const core::Dataset& dataset, const EmbeddedTask& task,
                           judge::Judge& judge_fn, const TrainConfig& cfg,
                           const std::filesystem::path& out_dir, const std::string& config_hash,
                           const TaskIndex& idx, int embed_dim, std::ofstream& log) {
    policy::PromptPgConfig pg_cfg{embed_dim, cfg.hidden_dim};
    policy::PromptPgParameters params = policy::PromptPgParameters::init(pg_cfg, cfg.seed);
    AdamOptimizer adam(cfg.learning_rate);
    const int shots = cfg.reward.max_shots;

    int episode = 0;
    for (episode = 1; episode <= cfg.episodes; ++episode) {
        rng::SplitMix ep_rng = rng::SplitMix::derived(cfg.seed, "episode",
                                                      {static_cast<std::uint64_t>(episode)});
        const auto batch_insts = sample_batch(idx.train_split, cfg.batch_size, ep_rng);

        std::vector<policy::PromptPgTrajectory> trajs;
        std::vector<policy::PromptPgItem> items;
        int skipped = 0;
        double mean_reward = 0.0;
        for (std::size_t i = 0; i < batch_insts.size(); ++i) {
            const auto* inst = batch_insts[i];
            const auto bank_it = dataset.banks.find(inst->knowledge_id);
            if (bank_it == dataset.banks.end()) {
                ++skipped;
                continue;
            }
            rng::SplitMix roll_rng = rng::SplitMix::derived(
                cfg.seed, "rollout", {static_cast<std::uint64_t>(episode), i});
            try {
                const Vec& xk = require_vec(task.knowledge, inst->knowledge_id, "knowledge");
                const Vec& xq = require_vec(task.question, inst->id, "question");
                const Mat& bank_x = require_bank(task, inst->knowledge_id);
                const Vec probs = policy::promptpg_scores(xk, xq, bank_x, params);
                policy::PromptPgTrajectory traj;
                traj.instance_id = inst->id;
                traj.picks = sample_without_replacement(probs, shots, roll_rng);
                std::vector<core::Demonstration> demos;
                for (int p : traj.picks)
                    demos.push_back(
                        bank_it->second.demonstrations[static_cast<std::size_t>(p)]);
                traj.reward = judge::eval_reward(judge_fn.judge(*inst, demos), inst->label);
                trajs.push_back(std::move(traj));
            } catch (const judge::JudgeError&) {
                ++skipped;
            }
        }

        double loss = 0.0;
        if (!trajs.empty()) {
            items.reserve(trajs.size());
            for (const auto& traj : trajs) {
                const auto* inst = idx.by_id.at(traj.instance_id);
                items.push_back(policy::PromptPgItem{
                    &task.knowledge.at(inst->knowledge_id), &task.question.at(inst->id),
                    &task.bank.at(inst->knowledge_id), &traj});
                mean_reward += traj.reward / static_cast<double>(trajs.size());
            }
            policy::PromptPgParameters grads = policy::PromptPgParameters::zeros_like(params);
            const policy::ReinforceStats stats =
                policy::reinforce_forward_backward(items, params, &grads);
            loss = stats.loss;
            const double norm = global_norm(std::as_const(grads).tensors());
            if (norm > cfg.grad_clip_norm)
                scale_tensors(grads.tensors(), cfg.grad_clip_norm / norm);
            adam.step(params.tensors(), std::as_const(grads).tensors());
        }

        json line{{"episode", episode},
                  {"loss", loss},
                  {"mean_return", mean_reward},
                  {"mean_shots", static_cast<double>(shots)},
                  {"fresh", trajs.size()},
                  {"skipped", skipped},
                  {"lr", adam.learning_rate()}};
        log << line.dump() << '\n';

        if (cfg.checkpoint_interval > 0 && episode % cfg.checkpoint_interval == 0)
            policy::save_checkpoint(params, out_dir / episode_checkpoint_name(episode),
                                    config_hash);
    }

    TrainResult result;
    result.checkpoint_file = out_dir / "checkpoint.bin";
    policy::save_checkpoint(params, result.checkpoint_file, config_hash);
    result.episodes_run = cfg.episodes;
    result.promptpg_params = std::move(params);
    return result;
}

}  // namespace

TrainResult train(const core::Dataset& dataset, embed::Embedder& embedder, judge::Judge& judge_fn,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const std::string& config_hash) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    const TaskIndex idx = build_index(dataset, cfg.probe_size);
    if (idx.train_split.empty()) throw TrainError("dataset has no train split");
    const EmbeddedTask task = embed_task(dataset, embedder);
    const int embed_dim = embedder.dimension();

    std::ofstream log(out_dir / "training_log.jsonl", std::ios::binary);
    if (!log) throw TrainError("cannot open training log in " + out_dir.string());
    json header{{"config_hash", config_hash},
                {"algorithm", algorithm_name(cfg.algorithm)},
                {"episodes", cfg.episodes},
                {"seed", cfg.seed}};
    log << header.dump() << '\n';

    TrainResult result;
    if (cfg.algorithm == Algorithm::promptpg) {
        result = train_promptpg(dataset, task, judge_fn, cfg, out_dir, config_hash, idx,
                                embed_dim, log);
        result.log_file = out_dir / "training_log.jsonl";
        return result;
    }

    policy::PolicyConfig pol_cfg{embed_dim, cfg.hidden_dim};
    policy::PolicyParameters params = policy::PolicyParameters::init(pol_cfg, cfg.seed);
    AdamOptimizer adam(cfg.learning_rate);
    ReplayBuffer replay(cfg.replay_capacity, cfg.replay_reuse);
    const policy::PpoConfig ppo_cfg{cfg.clip_eps, cfg.value_coef, cfg.entropy_coef};

    std::ofstream spill;
    if (!cfg.replay_spill_file.empty())
        spill.open(cfg.replay_spill_file, std::ios::binary);

    for (int episode = 1; episode <= cfg.episodes; ++episode) {
        rng::SplitMix ep_rng = rng::SplitMix::derived(cfg.seed, "episode",
                                                      {static_cast<std::uint64_t>(episode)});
        const auto batch_insts = sample_batch(idx.train_split, cfg.batch_size, ep_rng);

        // -- fresh rollouts
        std::vector<rewards::Trajectory> fresh;
        int skipped = 0;
        double mean_return = 0.0;
        double mean_shots = 0.0;
        for (std::size_t i = 0; i < batch_insts.size(); ++i) {
            const auto* inst = batch_insts[i];
            const auto bank_it = dataset.banks.find(inst->knowledge_id);
            if (bank_it == dataset.banks.end()) {
                ++skipped;
                continue;
            }
            rng::SplitMix roll_rng = rng::SplitMix::derived(
                cfg.seed, "rollout", {static_cast<std::uint64_t>(episode), i});
            try {
                fresh.push_back(rollout(params, *inst, bank_it->second, task, judge_fn,
                                        cfg.reward, roll_rng, cfg.mask_selected));
            } catch (const judge::JudgeError&) {
                ++skipped;
            }
        }

        policy::PpoStats last_stats;
        bool rolled_back = false;
        if (!fresh.empty()) {
            // -- replay sample drawn before the fresh batch is pushed
            rng::SplitMix replay_rng = rng::SplitMix::derived(
                cfg.seed, "replay", {static_cast<std::uint64_t>(episode)});
            std::vector<rewards::Trajectory> replayed =
                replay.sample(cfg.batch_size, replay_rng);

            std::vector<const rewards::Trajectory*> update_set;
            for (const auto& t : fresh) update_set.push_back(&t);
            for (const auto& t : replayed) update_set.push_back(&t);

            std::vector<std::vector<double>> returns, values;
            for (const auto* t : update_set) {
                returns.push_back(rewards::compute_returns(*t, cfg.reward));
                std::vector<double> v;
                for (const auto& s : t->steps) v.push_back(s.value);
                values.push_back(std::move(v));
            }
            const auto advs = rewards::advantages(returns, values);

            std::vector<policy::TrajectoryView> views;
            views.reserve(update_set.size());
            for (std::size_t i = 0; i < update_set.size(); ++i) {
                const auto* inst = idx.by_id.at(update_set[i]->instance_id);
                views.push_back(policy::TrajectoryView{
                    &task.knowledge.at(inst->knowledge_id), &task.question.at(inst->id),
                    &task.bank.at(inst->knowledge_id), update_set[i], returns[i], advs[i],
                    cfg.reward.stop_enabled, cfg.mask_selected});
            }

            for (const auto& t : fresh) {
                mean_return += returns[&t - fresh.data()][0] / static_cast<double>(fresh.size());
                mean_shots += count_selects(t) / static_cast<double>(fresh.size());
            }

            // -- PPO epochs with rollback on numerical failure
            const policy::PolicyParameters snapshot = params;
            const AdamOptimizer::Snapshot adam_snapshot = adam.snapshot();
            try {
                for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
                    policy::PolicyParameters grads = policy::PolicyParameters::zeros_like(params);
                    last_stats = policy::ppo_forward_backward(views, params, ppo_cfg, &grads);
                    const double norm = global_norm(std::as_const(grads).tensors());
                    if (norm > cfg.grad_clip_norm)
                        scale_tensors(grads.tensors(), cfg.grad_clip_norm / norm);
                    adam.step(params.tensors(), std::as_const(grads).tensors());
                    if (!params.all_finite()) throw policy::PolicyError("non-finite parameters");
                }
            } catch (const policy::PolicyError&) {
                params = snapshot;
                adam.restore(adam_snapshot);
                adam.set_learning_rate(adam.learning_rate() / 2.0);
                rolled_back = true;
            }

            for (auto& t : fresh) {
                if (spill.is_open()) spill << rewards::trajectory_to_json(t).dump() << '\n';
                replay.push(std::move(t));
            }

            json line{{"episode", episode},
                      {"loss", last_stats.loss},
                      {"policy_loss", last_stats.policy_loss},
                      {"value_loss", last_stats.value_loss},
                      {"entropy", last_stats.entropy},
                      {"mean_ratio", last_stats.mean_ratio},
                      {"clip_fraction", last_stats.clip_fraction},
                      {"mean_return", mean_return},
                      {"mean_shots", mean_shots},
                      {"fresh", fresh.size()},
                      {"replayed", replayed.size()},
                      {"skipped", skipped},
                      {"lr", adam.learning_rate()}};
            if (rolled_back) line["rolled_back"] = true;
            if (cfg.probe_interval > 0 && episode % cfg.probe_interval == 0)
                line["probe_accuracy"] =
                    probe_accuracy_policy(params, idx, dataset, task, judge_fn, cfg);
            log << line.dump() << '\n';
        } else {
            json line{{"episode", episode}, {"skipped", skipped}, {"fresh", 0}};
            log << line.dump() << '\n';
        }

        if (cfg.checkpoint_interval > 0 && episode % cfg.checkpoint_interval == 0)
            policy::save_checkpoint(params, out_dir / episode_checkpoint_name(episode),
                                    config_hash);
    }

    result.checkpoint_file = out_dir / "checkpoint.bin";
    policy::save_checkpoint(params, result.checkpoint_file, config_hash);
    result.log_file = out_dir / "training_log.jsonl";
    result.episodes_run = cfg.episodes;
    result.policy_params = std::move(params);
    return result;
}

}  // namespace flexsdr::trainer
