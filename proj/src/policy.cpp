#include "flexsdr/policy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace flexsdr::policy {

using nlohmann::json;

namespace {

double uniform_in(rng::SplitMix& r, double lo, double hi) { return r.next_range(lo, hi); }

void fill_uniform(Mat& m, rng::SplitMix& r, double bound) {
    // Column-major fill so the draw order matches the storage order.
    for (long j = 0; j < m.cols(); ++j)
        for (long i = 0; i < m.rows(); ++i) m(i, j) = uniform_in(r, -bound, bound);
}

void fill_uniform(Vec& v, rng::SplitMix& r, double bound) {
    for (long i = 0; i < v.size(); ++i) v[i] = uniform_in(r, -bound, bound);
}

bool finite(const double* data, long n) {
    for (long i = 0; i < n; ++i)
        if (!std::isfinite(data[i])) return false;
    return true;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

PolicyParameters PolicyParameters::init(const PolicyConfig& cfg, std::uint64_t seed) {
    if (cfg.embed_dim < 1 || cfg.hidden_dim < 1)
        throw PolicyError("embed_dim and hidden_dim must be positive");

    const int d = cfg.embed_dim;
    const int H = cfg.hidden_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(H));

    PolicyParameters p;
    p.embed_dim = d;
    p.hidden_dim = H;
    p.w0.resize(H, 2 * d);
    p.b0 = Vec::Zero(H);
    p.lstm_wx.resize(4 * H, d);
    p.lstm_wh.resize(4 * H, H);
    p.lstm_b = Vec::Zero(4 * H);
    p.wa.resize(H, d);
    p.x_stop.resize(d);
    p.value_w.resize(H);
    p.value_b = 0.0;

    rng::SplitMix r = rng::SplitMix::derived(seed, "policy-init");
    fill_uniform(p.w0, r, bound);
    fill_uniform(p.lstm_wx, r, bound);
    fill_uniform(p.lstm_wh, r, bound);
    fill_uniform(p.wa, r, bound);
    fill_uniform(p.value_w, r, bound);
    fill_uniform(p.x_stop, r, 1.0);
    const double norm = p.x_stop.norm();
    if (norm > 0.0) p.x_stop /= norm;
    return p;
}

PolicyParameters PolicyParameters::zeros_like(const PolicyParameters& other) {
    PolicyParameters p;
    p.embed_dim = other.embed_dim;
    p.hidden_dim = other.hidden_dim;
    p.w0 = Mat::Zero(other.w0.rows(), other.w0.cols());
    p.b0 = Vec::Zero(other.b0.size());
    p.lstm_wx = Mat::Zero(other.lstm_wx.rows(), other.lstm_wx.cols());
    p.lstm_wh = Mat::Zero(other.lstm_wh.rows(), other.lstm_wh.cols());
    p.lstm_b = Vec::Zero(other.lstm_b.size());
    p.wa = Mat::Zero(other.wa.rows(), other.wa.cols());
    p.x_stop = Vec::Zero(other.x_stop.size());
    p.value_w = Vec::Zero(other.value_w.size());
    p.value_b = 0.0;
    return p;
}

std::vector<TensorView> PolicyParameters::tensors() {
    return {
        {"w0", w0.data(), w0.rows(), w0.cols()},
        {"b0", b0.data(), b0.size(), 1},
        {"lstm_wx", lstm_wx.data(), lstm_wx.rows(), lstm_wx.cols()},
        {"lstm_wh", lstm_wh.data(), lstm_wh.rows(), lstm_wh.cols()},
        {"lstm_b", lstm_b.data(), lstm_b.size(), 1},
        {"wa", wa.data(), wa.rows(), wa.cols()},
        {"x_stop", x_stop.data(), x_stop.size(), 1},
        {"value_w", value_w.data(), value_w.size(), 1},
        {"value_b", &value_b, 1, 1},
    };
}

std::vector<ConstTensorView> PolicyParameters::tensors() const {
    return {
        {"w0", w0.data(), w0.rows(), w0.cols()},
        {"b0", b0.data(), b0.size(), 1},
        {"lstm_wx", lstm_wx.data(), lstm_wx.rows(), lstm_wx.cols()},
        {"lstm_wh", lstm_wh.data(), lstm_wh.rows(), lstm_wh.cols()},
        {"lstm_b", lstm_b.data(), lstm_b.size(), 1},
        {"wa", wa.data(), wa.rows(), wa.cols()},
        {"x_stop", x_stop.data(), x_stop.size(), 1},
        {"value_w", value_w.data(), value_w.size(), 1},
        {"value_b", &value_b, 1, 1},
    };
}

bool PolicyParameters::all_finite() const {
    for (const auto& t : tensors())
        if (!finite(t.data, t.size())) return false;
    return true;
}

Vec masked_softmax(const Vec& logits, const std::vector<std::uint8_t>& mask) {
    if (static_cast<std::size_t>(logits.size()) != mask.size())
        throw PolicyError("logits/mask size mismatch");

    double max_logit = -std::numeric_limits<double>::infinity();
    for (long i = 0; i < logits.size(); ++i)
        if (mask[i] && logits[i] > max_logit) max_logit = logits[i];
    if (!std::isfinite(max_logit)) throw PolicyError("no legal action");

    Vec probs = Vec::Zero(logits.size());
    double sum = 0.0;
    for (long i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        probs[i] = std::exp(logits[i] - max_logit);
        sum += probs[i];
    }
    for (long i = 0; i < logits.size(); ++i)
        if (mask[i]) probs[i] /= sum;
    return probs;
}

PolicyState fuse_query(const Vec& x_knowledge, const Vec& x_question,
                       const PolicyParameters& params) {
    const int d = params.embed_dim;
    if (x_knowledge.size() != d || x_question.size() != d)
        throw PolicyError("fuse_query: embedding dimension mismatch");

    Vec joint(2 * d);
    joint << x_knowledge, x_question;

    PolicyState s;
    s.h = (params.w0 * joint + params.b0).array().tanh().matrix();
    s.c = Vec::Zero(params.hidden_dim);
    return s;
}

PolicyState advance_state(const PolicyState& state, const Vec& x_demo,
                          const PolicyParameters& params) {
    const int d = params.embed_dim;
    const int H = params.hidden_dim;
    if (x_demo.size() != d) throw PolicyError("advance_state: embedding dimension mismatch");
    if (state.h.size() != H || state.c.size() != H)
        throw PolicyError("advance_state: state dimension mismatch");

    const Vec z = params.lstm_wx * x_demo + params.lstm_wh * state.h + params.lstm_b;

    PolicyState next;
    next.selected = state.selected;
    next.c.resize(H);
    next.h.resize(H);
    for (int i = 0; i < H; ++i) {
        const double gi = sigmoid(z[i]);
        const double gf = sigmoid(z[H + i]);
        const double gg = std::tanh(z[2 * H + i]);
        const double go = sigmoid(z[3 * H + i]);
        next.c[i] = gf * state.c[i] + gi * gg;
        next.h[i] = go * std::tanh(next.c[i]);
    }
    return next;
}

ActionDistribution score_actions(const PolicyState& state, const Mat& bank_embeddings,
                                 const PolicyParameters& params, bool stop_allowed,
                                 bool mask_selected) {
    const long n = bank_embeddings.rows();
    if (bank_embeddings.cols() != params.embed_dim)
        throw PolicyError("score_actions: bank embedding dimension mismatch");
    if (state.h.size() != params.hidden_dim)
        throw PolicyError("score_actions: state dimension mismatch");

    const Vec u = params.wa.transpose() * state.h;  // d

    ActionDistribution dist;
    dist.stop_index = static_cast<int>(n);
    dist.logits.resize(n + 1);
    dist.logits.head(n) = bank_embeddings * u;
    dist.logits[n] = params.x_stop.dot(u);

    dist.mask.assign(static_cast<std::size_t>(n) + 1, 1);
    if (mask_selected)
        for (int idx : state.selected)
            if (idx >= 0 && idx < n) dist.mask[static_cast<std::size_t>(idx)] = 0;
    if (!stop_allowed) dist.mask[static_cast<std::size_t>(n)] = 0;

    dist.probs = masked_softmax(dist.logits, dist.mask);
    return dist;
}

double value_estimate(const PolicyState& state, const PolicyParameters& params) {
    if (state.h.size() != params.hidden_dim)
        throw PolicyError("value_estimate: state dimension mismatch");
    return params.value_w.dot(state.h) + params.value_b;
}

SampledAction sample_action(const ActionDistribution& dist, rng::SplitMix& rand) {
    const double u = rand.next_unit();
    double cum = 0.0;
    int last_legal = -1;
    for (long i = 0; i < dist.probs.size(); ++i) {
        if (!dist.mask[i] || dist.probs[i] <= 0.0) continue;
        last_legal = static_cast<int>(i);
        cum += dist.probs[i];
        if (u < cum) return {static_cast<int>(i), std::log(dist.probs[i])};
    }
    if (last_legal < 0) throw PolicyError("no legal action to sample");
    return {last_legal, std::log(dist.probs[last_legal])};
}

SampledAction greedy_action(const ActionDistribution& dist) {
    int best = -1;
    double best_p = -1.0;
    for (long i = 0; i < dist.probs.size(); ++i) {
        if (!dist.mask[i]) continue;
        if (dist.probs[i] > best_p) {
            best_p = dist.probs[i];
            best = static_cast<int>(i);
        }
    }
    if (best < 0) throw PolicyError("no legal action");
    return {best, std::log(dist.probs[best])};
}

// ---------------------------------------------------------------------------
// PPO forward/backward
// ---------------------------------------------------------------------------

namespace {

// Activations recorded for one scoring step.
struct StepTape {
    Vec h, c;
    Vec probs;
    std::vector<std::uint8_t> mask;
    int slot = 0;        // index into the n+1 action slots
    double ratio = 0.0;  // exp(new_logprob - behavior_logprob)
    double entropy = 0.0;
    double value = 0.0;
    double dloss_dlp = 0.0;  // policy-surrogate gradient w.r.t. the new logprob
    double dloss_dv = 0.0;
};

// Activations recorded for one LSTM transition (state t -> t+1).
struct TransTape {
    Vec gi, gf, gg, go;  // gate activations
    Vec c_prev, h_prev, c_new;
    int demo_index = 0;  // input embedding = bank row
};

}  // namespace

PpoStats ppo_forward_backward(const std::vector<TrajectoryView>& batch,
                              const PolicyParameters& params, const PpoConfig& cfg,
                              PolicyParameters* grads) {
    const int H = params.hidden_dim;

    long total_steps = 0;
    for (const auto& item : batch) total_steps += static_cast<long>(item.traj->steps.size());
    if (total_steps == 0) throw PolicyError("ppo loss over an empty batch");
    const double inv_n = 1.0 / static_cast<double>(total_steps);

    PpoStats stats;
    stats.steps = total_steps;

    for (const auto& item : batch) {
        const rewards::Trajectory& traj = *item.traj;
        const std::size_t len = traj.steps.size();
        if (item.advantages.size() != len || item.returns.size() != len)
            throw PolicyError("trajectory annotations do not match step count");

        std::vector<StepTape> steps(len);
        std::vector<TransTape> trans;
        trans.reserve(len);

        PolicyState state = fuse_query(*item.x_knowledge, *item.x_question, params);

        // -- forward, recording activations
        for (std::size_t t = 0; t < len; ++t) {
            const rewards::StepRecord& rec = traj.steps[t];
            ActionDistribution dist = score_actions(state, *item.bank, params,
                                                    item.stop_enabled, item.mask_selected);
            const int n = dist.stop_index;
            const int slot = rec.action == rewards::kStopAction ? n : rec.action;
            if (slot < 0 || slot > n || !dist.mask[slot])
                throw PolicyError("stored action is not legal when replayed");

            StepTape& tape = steps[t];
            tape.h = state.h;
            tape.c = state.c;
            tape.probs = dist.probs;
            tape.mask = dist.mask;
            tape.slot = slot;

            const double lp_new = std::log(dist.probs[slot]);
            tape.ratio = std::exp(lp_new - rec.logprob);
            tape.value = value_estimate(state, params);

            double entropy = 0.0;
            for (long i = 0; i < dist.probs.size(); ++i)
                if (dist.mask[i] && dist.probs[i] > 0.0)
                    entropy -= dist.probs[i] * std::log(dist.probs[i]);
            tape.entropy = entropy;

            const double adv = item.advantages[t];
            const double unclipped = tape.ratio * adv;
            const double clipped =
                std::clamp(tape.ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            stats.policy_loss += -std::min(unclipped, clipped) * inv_n;
            // Gradient flows through the unclipped branch only while it is
            // the active minimum.
            tape.dloss_dlp = unclipped <= clipped ? -adv * tape.ratio * inv_n : 0.0;
            if (unclipped > clipped) stats.clip_fraction += inv_n;
            stats.mean_ratio += tape.ratio * inv_n;

            const double verr = tape.value - item.returns[t];
            stats.value_loss += verr * verr * inv_n;
            tape.dloss_dv = 2.0 * cfg.value_coef * verr * inv_n;

            stats.entropy += entropy * inv_n;

            if (rec.action != rewards::kStopAction) {
                state.selected.push_back(rec.action);
                if (t + 1 < len) {
                    // Record the transition tape by redoing the cell step
                    // with intermediate gate values kept.
                    TransTape tt;
                    tt.demo_index = rec.action;
                    tt.c_prev = state.c;
                    tt.h_prev = state.h;
                    const Vec x = item.bank->row(rec.action).transpose();
                    const Vec z = params.lstm_wx * x + params.lstm_wh * state.h + params.lstm_b;
                    tt.gi.resize(H);
                    tt.gf.resize(H);
                    tt.gg.resize(H);
                    tt.go.resize(H);
                    tt.c_new.resize(H);
                    Vec h_new(H);
                    for (int i = 0; i < H; ++i) {
                        tt.gi[i] = sigmoid(z[i]);
                        tt.gf[i] = sigmoid(z[H + i]);
                        tt.gg[i] = std::tanh(z[2 * H + i]);
                        tt.go[i] = sigmoid(z[3 * H + i]);
                        tt.c_new[i] = tt.gf[i] * state.c[i] + tt.gi[i] * tt.gg[i];
                        h_new[i] = tt.go[i] * std::tanh(tt.c_new[i]);
                    }
                    state.h = std::move(h_new);
                    state.c = tt.c_new;
                    trans.push_back(std::move(tt));
                }
            }
        }

        if (!grads) continue;

        // -- backward: scorer/value locals, then BPTT to the fusion layer
        Vec dh = Vec::Zero(H);
        Vec dc = Vec::Zero(H);
        for (std::size_t ti = len; ti-- > 0;) {
            if (ti + 1 < len) {
                // dh/dc currently refer to state ti+1; pull them through the
                // transition produced after step ti.
                const TransTape& tt = trans[ti];
                Vec tanh_c = tt.c_new.array().tanh().matrix();
                Vec dz(4 * H);
                Vec dc_total(H);
                for (int i = 0; i < H; ++i) {
                    const double d_o = dh[i] * tanh_c[i];
                    dc_total[i] = dc[i] + dh[i] * tt.go[i] * (1.0 - tanh_c[i] * tanh_c[i]);
                    const double d_i = dc_total[i] * tt.gg[i];
                    const double d_f = dc_total[i] * tt.c_prev[i];
                    const double d_g = dc_total[i] * tt.gi[i];
                    dz[i] = d_i * tt.gi[i] * (1.0 - tt.gi[i]);
                    dz[H + i] = d_f * tt.gf[i] * (1.0 - tt.gf[i]);
                    dz[2 * H + i] = d_g * (1.0 - tt.gg[i] * tt.gg[i]);
                    dz[3 * H + i] = d_o * tt.go[i] * (1.0 - tt.go[i]);
                }
                const Vec x = item.bank->row(tt.demo_index).transpose();
                grads->lstm_wx.noalias() += dz * x.transpose();
                grads->lstm_wh.noalias() += dz * tt.h_prev.transpose();
                grads->lstm_b += dz;
                dh = params.lstm_wh.transpose() * dz;
                for (int i = 0; i < H; ++i) dc[i] = dc_total[i] * tt.gf[i];
            }

            const StepTape& tape = steps[ti];
            const long slots = tape.probs.size();
            const long n = slots - 1;

            // d loss / d logits: policy surrogate + entropy bonus. Masked
            // slots keep an exact zero gradient.
            Vec gl = Vec::Zero(slots);
            for (long j = 0; j < slots; ++j) {
                if (!tape.mask[j]) continue;
                const double p = tape.probs[j];
                double g = tape.dloss_dlp * ((j == tape.slot ? 1.0 : 0.0) - p);
                if (p > 0.0)
                    g += cfg.entropy_coef * inv_n * p * (std::log(p) + tape.entropy);
                gl[j] = g;
            }

            // Scorer backward: logit_j = h^T Wa x_j.
            Vec xg = item.bank->transpose() * gl.head(n);  // d
            xg.noalias() += gl[n] * params.x_stop;
            const Vec u = params.wa.transpose() * tape.h;
            grads->wa.noalias() += tape.h * xg.transpose();
            grads->x_stop.noalias() += gl[n] * u;
            dh.noalias() += params.wa * xg;

            // Value head backward.
            grads->value_w.noalias() += tape.dloss_dv * tape.h;
            grads->value_b += tape.dloss_dv;
            dh.noalias() += tape.dloss_dv * params.value_w;
        }

        // Fusion layer: h_0 = tanh(w0 [xk ; xq] + b0); c_0 is constant.
        const Vec& h0 = steps.front().h;
        Vec dpre(H);
        for (int i = 0; i < H; ++i) dpre[i] = dh[i] * (1.0 - h0[i] * h0[i]);
        Vec joint(2 * params.embed_dim);
        joint << *item.x_knowledge, *item.x_question;
        grads->w0.noalias() += dpre * joint.transpose();
        grads->b0 += dpre;
    }

    stats.loss = stats.policy_loss + cfg.value_coef * stats.value_loss -
                 cfg.entropy_coef * stats.entropy;
    if (!std::isfinite(stats.loss)) throw PolicyError("non-finite PPO loss");
    return stats;
}

// ---------------------------------------------------------------------------
// PromptPG
// ---------------------------------------------------------------------------

PromptPgParameters PromptPgParameters::init(const PromptPgConfig& cfg, std::uint64_t seed) {
    if (cfg.embed_dim < 1 || cfg.hidden_dim < 1)
        throw PolicyError("embed_dim and hidden_dim must be positive");

    PromptPgParameters p;
    p.embed_dim = cfg.embed_dim;
    p.hidden_dim = cfg.hidden_dim;
    p.w1.resize(cfg.hidden_dim, 3 * cfg.embed_dim);
    p.b1 = Vec::Zero(cfg.hidden_dim);
    p.w2.resize(cfg.hidden_dim);
    p.b2 = 0.0;

    rng::SplitMix r = rng::SplitMix::derived(seed, "promptpg-init");
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    fill_uniform(p.w1, r, bound);
    fill_uniform(p.w2, r, bound);
    return p;
}

PromptPgParameters PromptPgParameters::zeros_like(const PromptPgParameters& other) {
    PromptPgParameters p;
    p.embed_dim = other.embed_dim;
    p.hidden_dim = other.hidden_dim;
    p.w1 = Mat::Zero(other.w1.rows(), other.w1.cols());
    p.b1 = Vec::Zero(other.b1.size());
    p.w2 = Vec::Zero(other.w2.size());
    p.b2 = 0.0;
    return p;
}

std::vector<TensorView> PromptPgParameters::tensors() {
    return {
        {"w1", w1.data(), w1.rows(), w1.cols()},
        {"b1", b1.data(), b1.size(), 1},
        {"w2", w2.data(), w2.size(), 1},
        {"b2", &b2, 1, 1},
    };
}

std::vector<ConstTensorView> PromptPgParameters::tensors() const {
    return {
        {"w1", w1.data(), w1.rows(), w1.cols()},
        {"b1", b1.data(), b1.size(), 1},
        {"w2", w2.data(), w2.size(), 1},
        {"b2", &b2, 1, 1},
    };
}

bool PromptPgParameters::all_finite() const {
    for (const auto& t : tensors())
        if (!finite(t.data, t.size())) return false;
    return true;
}

Vec promptpg_scores(const Vec& x_knowledge, const Vec& x_question, const Mat& bank_embeddings,
                    const PromptPgParameters& params) {
    const int d = params.embed_dim;
    if (x_knowledge.size() != d || x_question.size() != d || bank_embeddings.cols() != d)
        throw PolicyError("promptpg_scores: embedding dimension mismatch");

    const long n = bank_embeddings.rows();
    Vec scores(n);
    Vec z(3 * d);
    z.head(d) = x_knowledge;
    z.segment(d, d) = x_question;
    for (long i = 0; i < n; ++i) {
        z.tail(d) = bank_embeddings.row(i).transpose();
        const Vec hidden = (params.w1 * z + params.b1).array().tanh().matrix();
        scores[i] = params.w2.dot(hidden) + params.b2;
    }
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 1);
    return masked_softmax(scores, mask);
}

ReinforceStats reinforce_forward_backward(const std::vector<PromptPgItem>& batch,
                                          const PromptPgParameters& params,
                                          PromptPgParameters* grads) {
    if (batch.empty()) throw PolicyError("reinforce loss over an empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    ReinforceStats stats;
    stats.trajectories = static_cast<long>(batch.size());
    double baseline = 0.0;
    for (const auto& item : batch) baseline += item.traj->reward * inv_b;
    stats.mean_reward = baseline;

    const int d = params.embed_dim;
    for (const auto& item : batch) {
        const Mat& bank = *item.bank;
        const long n = bank.rows();
        const Vec probs = promptpg_scores(*item.x_knowledge, *item.x_question, bank, params);

        const double adv = item.traj->reward - baseline;
        double logp_sum = 0.0;
        Vec pick_count = Vec::Zero(n);
        for (int idx : item.traj->picks) {
            if (idx < 0 || idx >= n) throw PolicyError("promptpg pick out of range");
            logp_sum += std::log(probs[idx]);
            pick_count[idx] += 1.0;
        }
        stats.loss += -logp_sum * adv * inv_b;

        if (!grads) continue;

        // d loss / d score_j = -(adv / B) * (count_j - K * p_j)
        const double k = static_cast<double>(item.traj->picks.size());
        Vec ds(n);
        for (long j = 0; j < n; ++j)
            ds[j] = -adv * inv_b * (pick_count[j] - k * probs[j]);

        Vec z(3 * d);
        z.head(d) = *item.x_knowledge;
        z.segment(d, d) = *item.x_question;
        for (long j = 0; j < n; ++j) {
            if (ds[j] == 0.0) continue;
            z.tail(d) = bank.row(j).transpose();
            const Vec hidden = (params.w1 * z + params.b1).array().tanh().matrix();
            grads->w2.noalias() += ds[j] * hidden;
            grads->b2 += ds[j];
            const Vec da = (ds[j] * params.w2.array() * (1.0 - hidden.array().square())).matrix();
            grads->w1.noalias() += da * z.transpose();
            grads->b1 += da;
        }
    }

    if (!std::isfinite(stats.loss)) throw PolicyError("non-finite REINFORCE loss");
    return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

void write_tensors(std::ofstream& out, const std::vector<ConstTensorView>& tensors) {
    for (const auto& t : tensors) {
        const std::uint32_t rows = static_cast<std::uint32_t>(t.rows);
        const std::uint32_t cols = static_cast<std::uint32_t>(t.cols);
        out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
        out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
        out.write(reinterpret_cast<const char*>(t.data),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

void save_checkpoint_impl(const std::vector<ConstTensorView>& tensors, const std::string& kind,
                          int embed_dim, int hidden_dim, const std::filesystem::path& path,
                          const std::string& config_hash) {
    json header{
        {"format_version", kFormatVersion},
        {"kind", kind},
        {"embed_dim", embed_dim},
        {"hidden_dim", hidden_dim},
        {"bank_agnostic", true},
        {"config_hash", config_hash},
    };
    json tlist = json::array();
    for (const auto& t : tensors)
        tlist.push_back(json{{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
    header["tensors"] = std::move(tlist);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw PolicyError("cannot open checkpoint for writing: " + path.string());
    out << header.dump() << '\n';
    write_tensors(out, tensors);
    if (!out) throw PolicyError("failed writing checkpoint: " + path.string());
}

json read_header(std::ifstream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line))
        throw PolicyError("checkpoint format error (missing header): " + path.string());
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object())
        throw PolicyError("checkpoint format error (bad header): " + path.string());
    if (header.value("format_version", -1) != kFormatVersion)
        throw PolicyError("unsupported checkpoint format version in " + path.string());
    return header;
}

void read_tensors(std::ifstream& in, std::vector<TensorView> tensors,
                  const json& header, const std::filesystem::path& path) {
    const auto& tlist = header.at("tensors");
    if (tlist.size() != tensors.size())
        throw PolicyError("checkpoint tensor list mismatch in " + path.string());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& meta = tlist[i];
        if (meta.at("name").get<std::string>() != tensors[i].name)
            throw PolicyError("checkpoint tensor order mismatch in " + path.string());
        std::uint32_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), sizeof rows);
        in.read(reinterpret_cast<char*>(&cols), sizeof cols);
        if (!in) throw PolicyError("checkpoint truncated: " + path.string());
        if (rows != static_cast<std::uint32_t>(tensors[i].rows) ||
            cols != static_cast<std::uint32_t>(tensors[i].cols))
            throw PolicyError("checkpoint shape error for tensor " +
                              std::string(tensors[i].name) + " in " + path.string());
        in.read(reinterpret_cast<char*>(tensors[i].data),
                static_cast<std::streamsize>(tensors[i].size() * sizeof(double)));
        if (!in) throw PolicyError("checkpoint truncated: " + path.string());
    }
}

CheckpointInfo info_from_header(const json& header) {
    CheckpointInfo info;
    info.format_version = header.value("format_version", 0);
    info.kind = header.value("kind", "");
    info.embed_dim = header.value("embed_dim", 0);
    info.hidden_dim = header.value("hidden_dim", 0);
    info.bank_agnostic = header.value("bank_agnostic", true);
    info.config_hash = header.value("config_hash", "");
    return info;
}

}  // namespace

void save_checkpoint(const PolicyParameters& params, const std::filesystem::path& path,
                     const std::string& config_hash) {
    save_checkpoint_impl(params.tensors(), "policy", params.embed_dim, params.hidden_dim, path,
                         config_hash);
}

void save_checkpoint(const PromptPgParameters& params, const std::filesystem::path& path,
                     const std::string& config_hash) {
    save_checkpoint_impl(params.tensors(), "promptpg", params.embed_dim, params.hidden_dim, path,
                         config_hash);
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PolicyError("cannot open checkpoint: " + path.string());
    return info_from_header(read_header(in, path));
}

PolicyParameters load_policy_checkpoint(const std::filesystem::path& path, int expect_embed_dim,
                                        CheckpointInfo* info_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PolicyError("cannot open checkpoint: " + path.string());
    const json header = read_header(in, path);
    const CheckpointInfo info = info_from_header(header);
    if (info.kind != "policy")
        throw PolicyError("checkpoint kind is \"" + info.kind + "\", expected policy");
    if (expect_embed_dim > 0 && info.embed_dim != expect_embed_dim)
        throw PolicyError("checkpoint shape error: embed_dim " + std::to_string(info.embed_dim) +
                          ", expected " + std::to_string(expect_embed_dim));

    PolicyConfig cfg{info.embed_dim, info.hidden_dim};
    PolicyParameters params = PolicyParameters::init(cfg, 0);
    read_tensors(in, params.tensors(), header, path);
    if (info_out) *info_out = info;
    return params;
}

PromptPgParameters load_promptpg_checkpoint(const std::filesystem::path& path,
                                            int expect_embed_dim, CheckpointInfo* info_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PolicyError("cannot open checkpoint: " + path.string());
    const json header = read_header(in, path);
    const CheckpointInfo info = info_from_header(header);
    if (info.kind != "promptpg")
        throw PolicyError("checkpoint kind is \"" + info.kind + "\", expected promptpg");
    if (expect_embed_dim > 0 && info.embed_dim != expect_embed_dim)
        throw PolicyError("checkpoint shape error: embed_dim " + std::to_string(info.embed_dim) +
                          ", expected " + std::to_string(expect_embed_dim));

    PromptPgConfig cfg{info.embed_dim, info.hidden_dim};
    PromptPgParameters params = PromptPgParameters::init(cfg, 0);
    read_tensors(in, params.tensors(), header, path);
    if (info_out) *info_out = info;
    return params;
}

}  // namespace flexsdr::policy
