#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsdr/policy.hpp"
#include "flexsdr/util.hpp"
#include "support/finite_diff.hpp"
#include "support/test_util.hpp"

#include <cmath>

using namespace flexsdr;
using policy::Mat;
using policy::Vec;
using test_util::TempDir;

namespace {

policy::PolicyParameters zero_params(int d, int H) {
    return policy::PolicyParameters::zeros_like(
        policy::PolicyParameters::init({d, H}, 1));
}

}  // namespace

TEST_CASE("fuse_query matches the tanh fusion") {
    SUBCASE("zero parameters give the zero state") {
        auto p = zero_params(3, 4);
        const auto s = policy::fuse_query(Vec::Ones(3), Vec::Ones(3), p);
        CHECK(s.h.norm() == 0.0);
        CHECK(s.c.norm() == 0.0);
        CHECK(s.selected.empty());
    }
    SUBCASE("entries stay inside tanh range") {
        auto p = policy::PolicyParameters::init({8, 16}, 3);
        p.w0 *= 50.0;  // saturate
        const auto s = policy::fuse_query(Vec::Ones(8).normalized(),
                                          Vec::Ones(8).normalized(), p);
        for (int i = 0; i < s.h.size(); ++i) {
            CHECK(s.h[i] < 1.0);
            CHECK(s.h[i] > -1.0);
        }
    }
    SUBCASE("d=1, H=1 arithmetic") {
        auto p = zero_params(1, 1);
        p.w0 << 1.0, 1.0;
        Vec xk(1), xq(1);
        xk << 0.6;
        xq << 0.8;
        const auto s = policy::fuse_query(xk, xq, p);
        CHECK(s.h[0] == doctest::Approx(std::tanh(1.4)).epsilon(1e-12));
        CHECK(s.h[0] == doctest::Approx(0.88535).epsilon(1e-4));
    }
    SUBCASE("dimension mismatch throws") {
        auto p = zero_params(3, 4);
        CHECK_THROWS_AS(policy::fuse_query(Vec::Ones(2), Vec::Ones(3), p),
                        policy::PolicyError);
    }
}

TEST_CASE("advance_state implements one LSTM cell step") {
    SUBCASE("all-zero weights with zero cell give the zero state") {
        auto p = zero_params(3, 4);
        policy::PolicyState s{Vec::Zero(4), Vec::Zero(4), {}};
        const auto next = policy::advance_state(s, Vec::Ones(3), p);
        CHECK(next.h.norm() == 0.0);  // h' = sigma(0) * tanh(0.5 * c) with c = 0
        CHECK(next.c.norm() == 0.0);
    }
    SUBCASE("zero weights halve the carried cell state") {
        auto p = zero_params(2, 2);
        policy::PolicyState s{Vec::Zero(2), Vec::Ones(2), {}};
        const auto next = policy::advance_state(s, Vec::Ones(2), p);
        CHECK(next.c[0] == doctest::Approx(0.5));  // forget gate sigma(0) = 0.5
        CHECK(next.h[0] == doctest::Approx(0.5 * std::tanh(0.5)));
    }
    SUBCASE("deterministic and finite") {
        auto p = policy::PolicyParameters::init({5, 6}, 11);
        policy::PolicyState s = policy::fuse_query(Vec::Ones(5).normalized(),
                                                   Vec::Ones(5).normalized(), p);
        const auto a = policy::advance_state(s, Vec::Ones(5).normalized(), p);
        const auto b = policy::advance_state(s, Vec::Ones(5).normalized(), p);
        CHECK(a.h == b.h);
        CHECK(a.c == b.c);
        CHECK(a.h.allFinite());
        CHECK(a.c.allFinite());
    }
}

TEST_CASE("score_actions computes the bilinear softmax") {
    auto p = zero_params(2, 2);
    p.wa = Mat::Identity(2, 2);
    p.x_stop = Vec::Zero(2);
    policy::PolicyState s{Vec::Zero(2), Vec::Zero(2), {}};
    s.h << 1.0, 0.0;
    Mat bank(2, 2);
    bank << 1.0, 0.0, 0.0, 1.0;

    SUBCASE("logits and probabilities match direct arithmetic") {
        const auto dist = policy::score_actions(s, bank, p, true);
        CHECK(dist.logits[0] == doctest::Approx(1.0));
        CHECK(dist.logits[1] == doctest::Approx(0.0));
        CHECK(dist.logits[2] == doctest::Approx(0.0));
        CHECK(dist.probs[0] == doctest::Approx(0.5761).epsilon(1e-4));
        CHECK(dist.probs[1] == doctest::Approx(0.2119).epsilon(1e-4));
        CHECK(dist.probs[2] == doctest::Approx(0.2119).epsilon(1e-4));
        CHECK(dist.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("selected demos carry exactly zero probability") {
        s.selected = {0};
        const auto dist = policy::score_actions(s, bank, p, true);
        CHECK(dist.probs[0] == 0.0);
        CHECK(dist.probs[1] + dist.probs[2] == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("stop slot masks off when not allowed") {
        Mat one_demo(1, 2);
        one_demo << 1.0, 0.0;
        policy::PolicyState fresh{s.h, s.c, {}};
        const auto dist = policy::score_actions(fresh, one_demo, p, false);
        CHECK(dist.probs[0] == doctest::Approx(1.0));
        CHECK(dist.probs[1] == 0.0);
    }
    SUBCASE("everything masked is an error") {
        policy::PolicyState done{s.h, s.c, {0, 1}};
        CHECK_THROWS_WITH_AS(policy::score_actions(done, bank, p, false),
                             doctest::Contains("no legal action"), policy::PolicyError);
    }
    SUBCASE("mask_selected=false allows repeats") {
        policy::PolicyState done{s.h, s.c, {0, 1}};
        const auto dist = policy::score_actions(done, bank, p, true, false);
        CHECK(dist.probs[0] > 0.0);
        CHECK(dist.probs[1] > 0.0);
    }
}

TEST_CASE("value head is linear in h") {
    auto p = zero_params(2, 3);
    policy::PolicyState s{Vec::Zero(3), Vec::Zero(3), {}};

    p.value_b = 0.3;
    CHECK(policy::value_estimate(s, p) == doctest::Approx(0.3));

    p.value_w << 1.0, -2.0, 0.5;
    policy::PolicyState sh{Vec::Zero(3), Vec::Zero(3), {}};
    sh.h << 0.2, 0.1, -0.4;
    const double v1 = policy::value_estimate(sh, p);
    policy::PolicyState s2h{2.0 * sh.h, sh.c, {}};
    const double v2 = policy::value_estimate(s2h, p);
    const double v0 = policy::value_estimate(s, p);
    CHECK(v2 - v0 == doctest::Approx(2.0 * (v1 - v0)).epsilon(1e-12));
    CHECK(std::isfinite(v1));
}

TEST_CASE("sampling and greedy selection") {
    policy::ActionDistribution dist;
    dist.logits = Vec::Zero(3);
    dist.mask = {1, 1, 1};
    dist.stop_index = 2;

    SUBCASE("degenerate distribution always returns its support") {
        dist.probs = Vec::Zero(3);
        dist.probs[0] = 1.0;
        rng::SplitMix rand(5);
        for (int i = 0; i < 20; ++i) {
            const auto a = policy::sample_action(dist, rand);
            CHECK(a.index == 0);
            CHECK(a.logprob == doctest::Approx(0.0));
        }
    }
    SUBCASE("greedy takes the argmax") {
        dist.probs = Vec::Zero(3);
        dist.probs << 0.3, 0.3, 0.4;
        CHECK(policy::greedy_action(dist).index == 2);
    }
    SUBCASE("greedy ties break to the lowest index") {
        policy::ActionDistribution tie;
        tie.logits = Vec::Zero(2);
        tie.probs = Vec::Zero(2);
        tie.probs << 0.5, 0.5;
        tie.mask = {1, 1};
        tie.stop_index = 1;
        CHECK(policy::greedy_action(tie).index == 0);
    }
    SUBCASE("sampled actions always have positive probability") {
        dist.probs = Vec::Zero(3);
        dist.probs << 0.0, 0.7, 0.3;
        dist.mask = {0, 1, 1};
        rng::SplitMix rand(9);
        for (int i = 0; i < 50; ++i) CHECK(policy::sample_action(dist, rand).index != 0);
    }
}

TEST_CASE("masked softmax is shift invariant") {
    rng::SplitMix rand(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rand.next_below(6));
        Vec logits(n);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
        bool any = false;
        for (int i = 0; i < n; ++i) {
            logits[i] = rand.next_range(-5.0, 5.0);
            mask[static_cast<std::size_t>(i)] = rand.next_unit() < 0.7 ? 1 : 0;
            any |= mask[static_cast<std::size_t>(i)] != 0;
        }
        if (!any) mask[0] = 1;
        const double shift = rand.next_range(-10.0, 10.0);
        const Vec base = policy::masked_softmax(logits, mask);
        const Vec shifted = policy::masked_softmax(Vec(logits.array() + shift), mask);
        for (int i = 0; i < n; ++i)
            CHECK(std::abs(base[i] - shifted[i]) < 1e-12);
    }
}

TEST_CASE("greedy action is invariant to positive scaling of h") {
    rng::SplitMix rand(12);
    auto p = policy::PolicyParameters::init({4, 5}, 8);
    Mat bank(6, 4);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 4; ++j) bank(i, j) = rand.next_range(-1.0, 1.0);

    for (int trial = 0; trial < 50; ++trial) {
        policy::PolicyState s{Vec::Zero(5), Vec::Zero(5), {}};
        for (int i = 0; i < 5; ++i) s.h[i] = rand.next_range(-1.0, 1.0);
        const double scale = rand.next_range(0.1, 7.0);
        policy::PolicyState scaled{Vec(scale * s.h), s.c, {}};
        const auto a = policy::greedy_action(policy::score_actions(s, bank, p, true));
        const auto b = policy::greedy_action(policy::score_actions(scaled, bank, p, true));
        CHECK(a.index == b.index);
    }
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

namespace {

struct GradFixture {
    int d = 3, H = 4, n = 3;
    policy::PolicyParameters params;
    Vec xk, xq;
    Mat bank;
    rewards::Trajectory traj_full;   // two selects
    rewards::Trajectory traj_stop;   // select then stop
    std::vector<policy::TrajectoryView> views;

    explicit GradFixture(std::uint64_t seed, bool stop_enabled = true)
        : params(policy::PolicyParameters::init({d, H}, seed)) {
        rng::SplitMix rand(seed ^ 0xabcdef);
        xk = Vec(d);
        xq = Vec(d);
        bank = Mat(n, d);
        for (int i = 0; i < d; ++i) {
            xk[i] = rand.next_range(-1.0, 1.0);
            xq[i] = rand.next_range(-1.0, 1.0);
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) bank(i, j) = rand.next_range(-1.0, 1.0);
        xk.normalize();
        xq.normalize();

        traj_full.instance_id = "full";
        traj_full.r0 = -1;
        traj_full.steps = {{1, -1.1, 0.2, 1, 0}, {0, -0.9, -0.1, -1, 0}};
        traj_full.terminated_by = rewards::TerminatedBy::max_len;

        traj_stop.instance_id = "stop";
        traj_stop.r0 = 1;
        traj_stop.steps = {{2, -1.3, 0.4, 1, 0}, {rewards::kStopAction, -1.2, 0.0, 1, 1}};
        traj_stop.terminated_by = rewards::TerminatedBy::stop;

        views.push_back({&xk, &xq, &bank, &traj_full,
                         {0.4, -0.6}, {0.8, -1.2}, stop_enabled, true});
        views.push_back({&xk, &xq, &bank, &traj_stop,
                         {1.5, 0.7}, {-0.3, 1.1}, stop_enabled, true});
    }
};

}  // namespace

TEST_CASE("analytic PPO gradients match central finite differences") {
    // Random small configuration (d=3, H=4, three demos, T=2); the oracle
    // re-evaluates the loss under point perturbations.
    for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        GradFixture fx(seed);
        const policy::PpoConfig cfg{0.2, 0.5, 0.01};

        auto grads = policy::PolicyParameters::zeros_like(fx.params);
        policy::ppo_forward_backward(fx.views, fx.params, cfg, &grads);

        const auto result = test_util::check_gradients<policy::PolicyParameters>(
            fx.params, grads,
            [&] { return policy::ppo_forward_backward(fx.views, fx.params, cfg, nullptr).loss; },
            1e-5);
        INFO("worst tensor: ", result.worst_tensor, "[", result.worst_index, "]");
        CHECK(result.max_rel_error < 1e-4);
        CHECK(result.entries > 100);
    }
}

TEST_CASE("zero advantages kill the policy-term gradient") {
    GradFixture fx(7);
    for (auto& v : fx.views) std::fill(v.advantages.begin(), v.advantages.end(), 0.0);
    // Isolate the surrogate: no value or entropy contribution.
    const policy::PpoConfig cfg{0.2, 0.0, 0.0};
    auto grads = policy::PolicyParameters::zeros_like(fx.params);
    policy::ppo_forward_backward(fx.views, fx.params, cfg, &grads);
    for (const auto& t : std::as_const(grads).tensors())
        for (long i = 0; i < t.size(); ++i) CHECK(t.data[i] == 0.0);
}

TEST_CASE("a masked stop slot gets an exactly zero stop-embedding gradient") {
    GradFixture fx(13, /*stop_enabled=*/false);
    // Rebuild trajectories without stop steps (stop is illegal here).
    fx.traj_stop.steps = {{2, -1.3, 0.4, 1, 0}, {0, -1.0, 0.1, -1, 0}};
    fx.traj_stop.terminated_by = rewards::TerminatedBy::max_len;

    const policy::PpoConfig cfg{0.2, 0.5, 0.01};
    auto grads = policy::PolicyParameters::zeros_like(fx.params);
    policy::ppo_forward_backward(fx.views, fx.params, cfg, &grads);
    CHECK(grads.x_stop.norm() == 0.0);
}

TEST_CASE("clipping arithmetic follows the surrogate definition") {
    // One step, ratio forced by mismatched behavior logprob.
    GradFixture fx(21);
    fx.views.resize(1);
    fx.traj_full.steps.resize(1);
    fx.views[0].advantages = {1.0};
    fx.views[0].returns = {0.0};

    // Behavior logprob much lower than current -> ratio > 1 + eps -> clipped.
    fx.traj_full.steps[0].logprob = -8.0;
    const policy::PpoConfig cfg{0.2, 0.0, 0.0};
    const auto stats = policy::ppo_forward_backward(fx.views, fx.params, cfg, nullptr);
    CHECK(stats.policy_loss == doctest::Approx(-1.2));  // min(rho, 1.2) * A = 1.2
    CHECK(stats.clip_fraction == doctest::Approx(1.0));
}

TEST_CASE("on-policy ratios are exactly one") {
    GradFixture fx(23);
    // Recompute behavior logprobs with the current parameters so that
    // new == behavior on the first pass.
    for (auto& view : fx.views) {
        auto* traj = const_cast<rewards::Trajectory*>(view.traj);
        policy::PolicyState state = policy::fuse_query(*view.x_knowledge, *view.x_question,
                                                       fx.params);
        for (auto& step : traj->steps) {
            const auto dist =
                policy::score_actions(state, *view.bank, fx.params, view.stop_enabled);
            const int slot =
                step.action == rewards::kStopAction ? dist.stop_index : step.action;
            step.logprob = std::log(dist.probs[slot]);
            if (step.action != rewards::kStopAction) {
                state.selected.push_back(step.action);
                state = policy::advance_state(state, view.bank->row(step.action).transpose(),
                                              fx.params);
            }
        }
    }
    const policy::PpoConfig cfg{0.2, 0.5, 0.01};
    const auto stats = policy::ppo_forward_backward(fx.views, fx.params, cfg, nullptr);
    CHECK(stats.mean_ratio == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(stats.clip_fraction == 0.0);
}

// ---------------------------------------------------------------------------
// PromptPG
// ---------------------------------------------------------------------------

TEST_CASE("promptpg scores") {
    rng::SplitMix rand(41);
    Mat bank(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) bank(i, j) = rand.next_range(-1.0, 1.0);
    const Vec xk = Vec::Ones(3).normalized();
    const Vec xq = Vec::Constant(3, 0.5).normalized();

    SUBCASE("zero weights give the uniform distribution") {
        auto p = policy::PromptPgParameters::zeros_like(
            policy::PromptPgParameters::init({3, 5}, 1));
        const Vec probs = policy::promptpg_scores(xk, xq, bank, p);
        for (int i = 0; i < 4; ++i) CHECK(probs[i] == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("probabilities sum to one") {
        auto p = policy::PromptPgParameters::init({3, 5}, 2);
        const Vec probs = policy::promptpg_scores(xk, xq, bank, p);
        CHECK(probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
        for (int i = 0; i < 4; ++i) CHECK(probs[i] > 0.0);
    }
    SUBCASE("permuting bank rows permutes the probabilities") {
        auto p = policy::PromptPgParameters::init({3, 5}, 3);
        const Vec probs = policy::promptpg_scores(xk, xq, bank, p);
        Mat permuted(4, 3);
        const int perm[4] = {2, 0, 3, 1};
        for (int i = 0; i < 4; ++i) permuted.row(i) = bank.row(perm[i]);
        const Vec probs_p = policy::promptpg_scores(xk, xq, permuted, p);
        for (int i = 0; i < 4; ++i)
            CHECK(probs_p[i] == doctest::Approx(probs[perm[i]]).epsilon(1e-12));
    }
}

TEST_CASE("reinforce gradients match finite differences") {
    rng::SplitMix rand(55);
    const int d = 3;
    Mat bank(4, d);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < d; ++j) bank(i, j) = rand.next_range(-1.0, 1.0);
    const Vec xk = Vec::Ones(d).normalized();
    Vec xq(d);
    xq << 0.3, -0.2, 0.9;
    xq.normalize();

    auto params = policy::PromptPgParameters::init({d, 4}, 17);
    policy::PromptPgTrajectory t1{"a", {0, 2}, 1};
    policy::PromptPgTrajectory t2{"b", {1, 3}, -1};
    std::vector<policy::PromptPgItem> batch{{&xk, &xq, &bank, &t1}, {&xk, &xq, &bank, &t2}};

    auto grads = policy::PromptPgParameters::zeros_like(params);
    policy::reinforce_forward_backward(batch, params, &grads);

    const auto result = test_util::check_gradients<policy::PromptPgParameters>(
        params, grads,
        [&] { return policy::reinforce_forward_backward(batch, params, nullptr).loss; }, 1e-5);
    INFO("worst tensor: ", result.worst_tensor);
    CHECK(result.max_rel_error < 1e-4);
}

TEST_CASE("equal rewards across the batch zero the reinforce gradient") {
    Mat bank = Mat::Identity(3, 3);
    const Vec xk = Vec::Ones(3).normalized();
    const Vec xq = Vec::Ones(3).normalized();
    auto params = policy::PromptPgParameters::init({3, 4}, 29);
    policy::PromptPgTrajectory t1{"a", {0}, 1};
    policy::PromptPgTrajectory t2{"b", {1}, 1};
    std::vector<policy::PromptPgItem> batch{{&xk, &xq, &bank, &t1}, {&xk, &xq, &bank, &t2}};

    auto grads = policy::PromptPgParameters::zeros_like(params);
    const auto stats = policy::reinforce_forward_backward(batch, params, &grads);
    CHECK(stats.mean_reward == doctest::Approx(1.0));
    for (const auto& t : std::as_const(grads).tensors())
        for (long i = 0; i < t.size(); ++i) CHECK(t.data[i] == doctest::Approx(0.0));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("policy checkpoints round-trip bit exactly") {
    TempDir dir("ckpt");
    const auto params = policy::PolicyParameters::init({5, 7}, 99);
    policy::save_checkpoint(params, dir.file("p.bin"), "deadbeef");

    policy::CheckpointInfo info;
    const auto back = policy::load_policy_checkpoint(dir.file("p.bin"), 0, &info);
    CHECK(info.kind == "policy");
    CHECK(info.embed_dim == 5);
    CHECK(info.hidden_dim == 7);
    CHECK(info.config_hash == "deadbeef");
    CHECK(info.bank_agnostic);

    const auto a = params.tensors();
    const auto b = back.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].size() == b[i].size());
        for (long j = 0; j < a[i].size(); ++j) CHECK(a[i].data[j] == b[i].data[j]);
    }
}

TEST_CASE("checkpoint dimension mismatches are shape errors") {
    TempDir dir("ckpt");
    const auto params = policy::PolicyParameters::init({5, 7}, 99);
    policy::save_checkpoint(params, dir.file("p.bin"), "");
    CHECK_THROWS_WITH_AS(policy::load_policy_checkpoint(dir.file("p.bin"), 9),
                         doctest::Contains("shape"), policy::PolicyError);
}

TEST_CASE("truncated checkpoints are format errors") {
    TempDir dir("ckpt");
    const auto params = policy::PolicyParameters::init({5, 7}, 99);
    policy::save_checkpoint(params, dir.file("p.bin"), "");
    const std::string full = util::read_file(dir.file("p.bin"));
    test_util::write_lines(dir.file("cut.bin"), full.substr(0, full.size() / 2));
    CHECK_THROWS_WITH_AS(policy::load_policy_checkpoint(dir.file("cut.bin")),
                         doctest::Contains("truncated"), policy::PolicyError);

    test_util::write_lines(dir.file("garbage.bin"), "not a checkpoint");
    CHECK_THROWS_AS(policy::load_policy_checkpoint(dir.file("garbage.bin")),
                    policy::PolicyError);
}

TEST_CASE("promptpg checkpoints round-trip and carry their kind") {
    TempDir dir("ckpt");
    const auto params = policy::PromptPgParameters::init({4, 6}, 5);
    policy::save_checkpoint(params, dir.file("pg.bin"), "h");
    CHECK(policy::peek_checkpoint(dir.file("pg.bin")).kind == "promptpg");
    const auto back = policy::load_promptpg_checkpoint(dir.file("pg.bin"));
    CHECK(back.w1 == params.w1);
    CHECK(back.b1 == params.b1);
    CHECK(back.w2 == params.w2);
    CHECK(back.b2 == params.b2);
    // Kind confusion is an error.
    CHECK_THROWS_AS(policy::load_policy_checkpoint(dir.file("pg.bin")), policy::PolicyError);
}
