#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flexsdr/judge.hpp"
#include "flexsdr/rng.hpp"
#include "support/test_util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

using namespace flexsdr;
using test_util::TempDir;
using test_util::make_demo;
using test_util::make_instance;

TEST_CASE("simulated judge follows the hint-coverage rule") {
    judge::SimulatedJudge sj({0.0, 1});
    const auto inst =
        make_instance("i1", "k1", "K", "Q", 1, core::Split::test, false, {3});

    SUBCASE("covered hints give the gold label") {
        const auto j = sj.judge(inst, {make_demo("d1", "k1", "q", 1, "r", {3, 7})});
        CHECK(j.prediction == inst.label);
        CHECK(j.parse_ok);
    }
    SUBCASE("uncovered hints flip the prediction") {
        const auto j = sj.judge(inst, {make_demo("d1", "k1", "q", 1, "r", {7})});
        CHECK(j.prediction == core::flip(inst.label));
    }
    SUBCASE("zero-shot solvable needs no demos") {
        const auto easy = make_instance("i2", "k1", "K", "Q", 0, core::Split::test, true, {});
        CHECK(sj.judge(easy, {}).prediction == easy.label);
    }
}

TEST_CASE("simulated judge raw text parses back to its prediction") {
    judge::SimulatedJudge sj({0.0, 1});
    const auto inst = make_instance("i1", "k1", "K", "Q", 0, core::Split::test, true, {});
    const auto j = sj.judge(inst, {});
    CHECK(prompt::parse_judgment(j.raw_text).prediction == j.prediction);
}

TEST_CASE("simulated judge requires sim metadata") {
    judge::SimulatedJudge sj({0.0, 1});
    core::TaggingInstance inst;
    inst.id = "no-meta";
    inst.label = core::Label::match;
    CHECK_THROWS_AS(sj.judge(inst, {}), judge::JudgeError);
}

TEST_CASE("noise draws are order-independent and deterministic") {
    judge::SimulatedJudge a({0.37, 99});
    judge::SimulatedJudge b({0.37, 99});
    const auto inst =
        make_instance("i1", "k1", "K", "Q", 1, core::Split::test, false, {1});
    const auto d1 = make_demo("d1", "k1", "q1", 1, "r", {1});
    const auto d2 = make_demo("d2", "k1", "q2", 0, "r", {2});

    // Same demo set in either order: identical judgment from both judges.
    const auto j12 = a.judge(inst, {d1, d2});
    const auto j21 = b.judge(inst, {d2, d1});
    CHECK(j12.prediction == j21.prediction);
    CHECK(a.judge(inst, {d1}).prediction == b.judge(inst, {d1}).prediction);
}

TEST_CASE("noise flips roughly the configured fraction") {
    judge::SimulatedJudge noisy({0.25, 7});
    int flips = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        const auto inst = make_instance("inst-" + std::to_string(i), "k1", "K", "Q", 1,
                                        core::Split::test, true, {});
        if (noisy.judge(inst, {}).prediction != inst.label) ++flips;
    }
    const double rate = static_cast<double>(flips) / n;
    CHECK(rate > 0.20);
    CHECK(rate < 0.30);
}

// Property: at noise 0, adding demonstrations never breaks a correct judgment.
TEST_CASE("hint coverage is monotone in the demo set") {
    judge::SimulatedJudge sj({0.0, 1});
    rng::SplitMix rand(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::set<int> required;
        for (int h = 1; h <= 4; ++h)
            if (rand.next_unit() < 0.4) required.insert(h);
        const auto inst = make_instance("i" + std::to_string(trial), "k1", "K", "Q",
                                        static_cast<int>(rand.next_below(2)), core::Split::test,
                                        rand.next_unit() < 0.3, required);
        std::vector<core::Demonstration> demos;
        bool was_correct = sj.judge(inst, demos).prediction == inst.label;
        for (int d = 0; d < 5; ++d) {
            std::set<int> hints;
            for (int h = 1; h <= 4; ++h)
                if (rand.next_unit() < 0.35) hints.insert(h);
            demos.push_back(make_demo("d" + std::to_string(d), "k1", "q", 1, "r", hints));
            const bool now_correct = sj.judge(inst, demos).prediction == inst.label;
            if (was_correct) CHECK(now_correct);
            was_correct = now_correct;
        }
    }
}

TEST_CASE("eval_reward is exactly +-1") {
    prompt::Judgment j;
    j.prediction = core::Label::match;
    CHECK(judge::eval_reward(j, core::Label::match) == 1);
    CHECK(judge::eval_reward(j, core::Label::mismatch) == -1);

    // Parse fallback still compares as a prediction.
    prompt::Judgment fallback;
    fallback.prediction = core::Label::mismatch;
    fallback.parse_ok = false;
    CHECK(judge::eval_reward(fallback, core::Label::mismatch) == 1);
}

namespace {

struct ChatServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> calls{0};
    std::atomic<int> fail_first{0};
    std::string reply = "Reasoning about the question. <No>";

    ChatServer() {
        server.Post("/v1/chat/completions",
                    [this](const httplib::Request&, httplib::Response& res) {
                        ++calls;
                        if (fail_first.fetch_sub(1) > 0) {
                            res.status = 500;
                            return;
                        }
                        nlohmann::json body{
                            {"choices",
                             {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}};
                        res.set_content(body.dump(), "application/json");
                    });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~ChatServer() {
        server.stop();
        thread.join();
    }
    judge::RemoteJudgeConfig config() const {
        judge::RemoteJudgeConfig cfg;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
        cfg.model = "test-chat";
        cfg.max_retries = 2;
        cfg.backoff_ms = 1;
        return cfg;
    }
};

}  // namespace

TEST_CASE("remote judge parses the response chain") {
    ChatServer srv;
    judge::RemoteJudge rj(srv.config());
    const auto inst = make_instance("i1", "k1", "K", "Q", 0, core::Split::test);
    const auto j = rj.judge(inst, {});
    CHECK(j.prediction == core::Label::mismatch);
    CHECK(j.parse_ok);
    CHECK(srv.calls == 1);
}

TEST_CASE("remote judge retries transient failures") {
    ChatServer srv;
    srv.fail_first = 1;
    judge::RemoteJudge rj(srv.config());
    const auto inst = make_instance("i1", "k1", "K", "Q", 0, core::Split::test);
    CHECK(rj.judge(inst, {}).parse_ok);
    CHECK(srv.calls == 2);
}

TEST_CASE("remote judge errors after exhausted retries, fabricating nothing") {
    ChatServer srv;
    srv.fail_first = 100;
    judge::RemoteJudge rj(srv.config());
    const auto inst = make_instance("i1", "k1", "K", "Q", 0, core::Split::test);
    CHECK_THROWS_AS(rj.judge(inst, {}), judge::JudgeError);
    CHECK(srv.calls == 3);  // initial try + 2 retries
}

TEST_CASE("caching wrapper hits the inner judge once per distinct request") {
    TempDir dir("judge");
    ChatServer srv;
    auto remote = std::make_shared<judge::RemoteJudge>(srv.config());
    auto cache = std::make_shared<judge::JudgeCache>(dir.file("cache.jsonl"));
    judge::CachingJudge cj(remote, cache);

    const auto inst = make_instance("i1", "k1", "K", "Q", 0, core::Split::test);
    const auto j1 = cj.judge(inst, {});
    const auto j2 = cj.judge(inst, {});
    CHECK(srv.calls == 1);
    CHECK(j1.prediction == j2.prediction);
    CHECK(j1.raw_text == j2.raw_text);

    const auto with_demo = cj.judge(inst, {make_demo("d1", "k1", "q", 1)});
    CHECK(srv.calls == 2);
    CHECK(with_demo.parse_ok);

    // A fresh wrapper over the persisted cache file still avoids the network.
    judge::CachingJudge cj2(remote, std::make_shared<judge::JudgeCache>(dir.file("cache.jsonl")));
    cj2.judge(inst, {});
    CHECK(srv.calls == 2);
}
