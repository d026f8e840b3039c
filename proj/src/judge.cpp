#include "flexsdr/judge.hpp"

#include "flexsdr/rng.hpp"
#include "flexsdr/util.hpp"
#include "http_post.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

namespace flexsdr::judge {

using nlohmann::json;

int eval_reward(const prompt::Judgment& j, core::Label gold) {
    return j.prediction == gold ? 1 : -1;
}

SimulatedJudge::SimulatedJudge(SimJudgeConfig cfg) : cfg_(cfg) {
    if (cfg_.noise_prob < 0.0 || cfg_.noise_prob >= 1.0)
        throw JudgeError("noise_prob must be in [0, 1)");
}

prompt::Judgment SimulatedJudge::judge(const core::TaggingInstance& instance,
                                       const std::vector<core::Demonstration>& demos) {
    if (!instance.sim_meta)
        throw JudgeError("instance " + instance.id + " has no simulation metadata");
    const core::SimMeta& meta = *instance.sim_meta;

    std::set<int> covered;
    for (const auto& d : demos) covered.insert(d.hints.begin(), d.hints.end());
    bool correct = meta.zero_shot_solvable ||
                   std::includes(covered.begin(), covered.end(), meta.required_hints.begin(),
                                 meta.required_hints.end());

    if (cfg_.noise_prob > 0.0) {
        std::vector<std::string> ids;
        ids.reserve(demos.size());
        for (const auto& d : demos) ids.push_back(d.id);
        std::sort(ids.begin(), ids.end());
        std::string key = instance.id;
        for (const auto& id : ids) {
            key += '\x1f';
            key += id;
        }
        if (rng::unit_hash(cfg_.seed, key) < cfg_.noise_prob) correct = !correct;
    }

    prompt::Judgment j;
    j.prediction = correct ? instance.label : core::flip(instance.label);
    j.parse_ok = true;
    j.raw_text = std::string("The question ") +
                 (j.prediction == core::Label::match ? "is" : "is not") +
                 " concerning the knowledge concept. " + prompt::judgment_token(j.prediction);
    return j;
}

struct RemoteJudge::Impl {
    http::InFlightLimit limit;
    explicit Impl(int max_in_flight) : limit(max_in_flight) {}
};

RemoteJudge::RemoteJudge(RemoteJudgeConfig cfg, prompt::PromptTemplate tmpl)
    : cfg_(std::move(cfg)),
      tmpl_(std::move(tmpl)),
      impl_(std::make_unique<Impl>(cfg_.max_in_flight)) {
    if (cfg_.base_url.empty()) throw JudgeError("remote judge: base_url is required");
    if (cfg_.model.empty()) throw JudgeError("remote judge: model is required");
}

RemoteJudge::~RemoteJudge() = default;

prompt::Judgment RemoteJudge::judge(const core::TaggingInstance& instance,
                                    const std::vector<core::Demonstration>& demos) {
    const std::string user_prompt =
        prompt::assemble_prompt(instance.knowledge_text, instance.question_text, demos, tmpl_);

    json body{
        {"model", cfg_.model},
        {"temperature", cfg_.temperature},
        {"messages", json::array({json{{"role", "user"}, {"content", user_prompt}}})},
    };

    http::PostConfig pc{cfg_.base_url, cfg_.path,       cfg_.api_key_env,
                        cfg_.max_retries, cfg_.backoff_ms, cfg_.timeout_s};
    json resp;
    try {
        resp = http::post_json(pc, body, &impl_->limit);
    } catch (const http::HttpError& e) {
        throw JudgeError(std::string("remote judge failed: ") + e.what());
    }

    if (!resp.contains("choices") || !resp["choices"].is_array() || resp["choices"].empty() ||
        !resp["choices"][0].contains("message") ||
        !resp["choices"][0]["message"].contains("content") ||
        !resp["choices"][0]["message"]["content"].is_string())
        throw JudgeError("remote judge response missing choices[0].message.content");

    return prompt::parse_judgment(resp["choices"][0]["message"]["content"].get<std::string>());
}

JudgeCache::JudgeCache(const std::filesystem::path& file) : file_(file) {
    std::ifstream in(file_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("key")) continue;
        prompt::Judgment j;
        j.prediction = core::label_from_int(rec.value("prediction", 0));
        j.raw_text = rec.value("raw_text", "");
        j.parse_ok = rec.value("parse_ok", false);
        entries_[rec["key"].get<std::string>()] = std::move(j);
    }
}

bool JudgeCache::get(const std::string& key, prompt::Judgment* out) const {
    std::lock_guard lk(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return false;
    *out = it->second;
    return true;
}

void JudgeCache::put(const std::string& key, const prompt::Judgment& j) {
    std::lock_guard lk(mu_);
    if (entries_.contains(key)) return;
    entries_[key] = j;
    std::ofstream out(file_, std::ios::app | std::ios::binary);
    if (!out) return;
    json rec{{"key", key},
             {"prediction", core::to_int(j.prediction)},
             {"raw_text", j.raw_text},
             {"parse_ok", j.parse_ok}};
    out << rec.dump() << '\n';
}

CachingJudge::CachingJudge(std::shared_ptr<Judge> inner, std::shared_ptr<JudgeCache> cache,
                           prompt::PromptTemplate tmpl)
    : inner_(std::move(inner)), cache_(std::move(cache)), tmpl_(std::move(tmpl)) {}

prompt::Judgment CachingJudge::judge(const core::TaggingInstance& instance,
                                     const std::vector<core::Demonstration>& demos) {
    const std::string request =
        instance.id + '\x1f' + std::to_string(core::to_int(instance.label)) + '\x1f' +
        prompt::assemble_prompt(instance.knowledge_text, instance.question_text, demos, tmpl_);
    const std::string key = util::sha256_hex(request);

    prompt::Judgment j;
    if (cache_->get(key, &j)) return j;
    j = inner_->judge(instance, demos);
    cache_->put(key, j);
    return j;
}

}  // namespace flexsdr::judge
