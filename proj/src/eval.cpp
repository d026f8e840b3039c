#include "flexsdr/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flexsdr::eval {

using nlohmann::json;
using policy::Mat;
using policy::Vec;

void ConfusionCounts::add(core::Label prediction, core::Label gold) {
    if (prediction == core::Label::match) {
        if (gold == core::Label::match) ++tp;
        else ++fp;
    } else {
        if (gold == core::Label::match) ++fn;
        else ++tn;
    }
}

Metrics metrics(const ConfusionCounts& c) {
    const long n = c.total();
    if (n == 0) throw EvalError("metrics over zero instances");

    Metrics m;
    m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
    m.precision = (c.tp + c.fp) > 0
                      ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                      : 0.0;
    m.recall = (c.tp + c.fn) > 0
                   ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                   : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

double cosine_similarity(const core::EmbeddingVector& a, const core::EmbeddingVector& b) {
    if (a.size() != b.size()) throw EvalError("cosine_similarity: dimension mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw EvalError("cosine_similarity: zero-norm vector");
    return a.dot(b) / (na * nb);
}

core::Label kq_threshold(const core::EmbeddingVector& x_knowledge,
                         const core::EmbeddingVector& x_question, double eta) {
    return cosine_similarity(x_knowledge, x_question) >= eta ? core::Label::match
                                                             : core::Label::mismatch;
}

core::Label kq_topk(const core::EmbeddingVector& x_knowledge,
                    const core::EmbeddingVector& x_question,
                    const std::vector<core::EmbeddingVector>& question_corpus, int k) {
    if (question_corpus.empty()) throw EvalError("kq_topk: empty corpus");
    if (k >= static_cast<int>(question_corpus.size())) return core::Label::match;

    const double target = cosine_similarity(x_knowledge, x_question);
    std::vector<double> sims;
    sims.reserve(question_corpus.size());
    for (const auto& q : question_corpus) sims.push_back(cosine_similarity(x_knowledge, q));
    std::nth_element(sims.begin(), sims.begin() + (k - 1), sims.end(), std::greater<>());
    const double kth = sims[static_cast<std::size_t>(k - 1)];
    return target >= kth ? core::Label::match : core::Label::mismatch;
}

core::Label qq_nearest(const core::EmbeddingVector& x_question,
                       const std::vector<std::pair<core::EmbeddingVector, core::Label>>& labeled) {
    if (labeled.empty()) throw EvalError("qq_nearest: empty corpus");
    double best = -2.0;
    core::Label vote = core::Label::mismatch;
    for (const auto& [vec, label] : labeled) {
        const double sim = cosine_similarity(x_question, vec);
        if (sim > best) {
            best = sim;
            vote = label;
        }
    }
    return vote;
}

EtaSearchResult grid_search_eta(const std::vector<std::pair<double, core::Label>>& scored,
                                const EtaGrid& grid) {
    if (grid.step <= 0.0 || grid.hi < grid.lo) throw EvalError("empty eta grid");
    if (scored.empty()) throw EvalError("grid_search_eta over zero instances");

    EtaSearchResult result;
    result.best_f1 = -1.0;
    // Half-step slack keeps the inclusive upper bound robust to fp drift.
    for (double eta = grid.lo; eta <= grid.hi + grid.step * 0.5; eta += grid.step) {
        ConfusionCounts c;
        for (const auto& [sim, gold] : scored)
            c.add(sim >= eta ? core::Label::match : core::Label::mismatch, gold);
        const double f1 = metrics(c).f1;
        result.table.emplace_back(eta, f1);
        if (f1 > result.best_f1) {
            result.best_f1 = f1;
            result.best_eta = eta;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Retriever evaluation
// ---------------------------------------------------------------------------

std::string retriever_name(RetrieverKind k) {
    switch (k) {
        case RetrieverKind::policy: return "policy";
        case RetrieverKind::promptpg: return "promptpg";
        case RetrieverKind::random: return "random";
        case RetrieverKind::similarity: return "similarity";
        case RetrieverKind::zero_shot: return "zero-shot";
    }
    throw std::logic_error("unreachable retriever kind");
}

RetrieverKind retriever_from_name(const std::string& name) {
    if (name == "policy") return RetrieverKind::policy;
    if (name == "promptpg") return RetrieverKind::promptpg;
    if (name == "random") return RetrieverKind::random;
    if (name == "similarity") return RetrieverKind::similarity;
    if (name == "zero-shot") return RetrieverKind::zero_shot;
    throw EvalError("unknown retriever \"" + name +
                    "\" (valid: policy, promptpg, random, similarity, zero-shot)");
}

namespace {

std::vector<int> pick_random(long bank_size, int k, std::uint64_t seed,
                             const std::string& instance_id) {
    rng::SplitMix rand =
        rng::SplitMix::derived(seed, "random-eval", {rng::fnv1a(instance_id)});
    std::vector<int> order(static_cast<std::size_t>(bank_size));
    std::iota(order.begin(), order.end(), 0);
    const int take = std::min<int>(k, static_cast<int>(bank_size));
    for (int i = 0; i < take; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) +
                              static_cast<std::size_t>(rand.next_below(order.size() - i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    order.resize(static_cast<std::size_t>(take));
    return order;
}

std::vector<int> pick_similar(const Vec& x_question, const Mat& bank, int k) {
    std::vector<int> order(static_cast<std::size_t>(bank.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sims(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        sims[i] = cosine_similarity(bank.row(static_cast<long>(i)).transpose(), x_question);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return sims[static_cast<std::size_t>(a)] >
                                                sims[static_cast<std::size_t>(b)]; });
    const int take = std::min<int>(k, static_cast<int>(order.size()));
    order.resize(static_cast<std::size_t>(take));
    return order;
}

std::vector<int> pick_promptpg(const Vec& xk, const Vec& xq, const Mat& bank,
                               const policy::PromptPgParameters& params, int k) {
    const Vec probs = policy::promptpg_scores(xk, xq, bank, params);
    std::vector<int> order(static_cast<std::size_t>(bank.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return probs[a] > probs[b]; });
    const int take = std::min<int>(k, static_cast<int>(order.size()));
    order.resize(static_cast<std::size_t>(take));
    return order;
}

}  // namespace

EvalReport evaluate_retriever(const RetrieverSpec& spec,
                              const std::vector<const core::TaggingInstance*>& split,
                              const std::map<std::string, core::DemonstrationBank>& banks,
                              const trainer::EmbeddedTask& task, judge::Judge& judge_fn,
                              int failure_budget, const std::string& config_hash) {
    if (split.empty()) throw EvalError("evaluate_retriever over an empty split");
    if (spec.kind == RetrieverKind::policy && !spec.params)
        throw EvalError("policy retriever requires parameters");
    if (spec.kind == RetrieverKind::promptpg && !spec.promptpg)
        throw EvalError("promptpg retriever requires parameters");

    EvalReport report;
    report.retriever = retriever_name(spec.kind);
    report.config_hash = config_hash;

    long parse_failures = 0;
    double shot_sum = 0.0;
    std::map<std::string, double> knowledge_shots;
    std::map<std::string, long> knowledge_n;

    for (const auto* inst : split) {
        std::vector<int> picks;
        const core::DemonstrationBank* bank = nullptr;
        if (spec.kind != RetrieverKind::zero_shot) {
            auto bank_it = banks.find(inst->knowledge_id);
            if (bank_it == banks.end())
                throw EvalError("no bank for knowledge " + inst->knowledge_id);
            bank = &bank_it->second;
            const Mat& bank_x = task.bank.at(inst->knowledge_id);
            switch (spec.kind) {
                case RetrieverKind::policy:
                    picks = trainer::greedy_selection(
                        *spec.params, task.knowledge.at(inst->knowledge_id),
                        task.question.at(inst->id), bank_x, spec.shots, spec.stop_enabled,
                        spec.mask_selected);
                    break;
                case RetrieverKind::promptpg:
                    picks = pick_promptpg(task.knowledge.at(inst->knowledge_id),
                                          task.question.at(inst->id), bank_x, *spec.promptpg,
                                          spec.shots);
                    break;
                case RetrieverKind::random:
                    picks = pick_random(bank_x.rows(), spec.shots, spec.seed, inst->id);
                    break;
                case RetrieverKind::similarity:
                    picks = pick_similar(task.question.at(inst->id), bank_x, spec.shots);
                    break;
                case RetrieverKind::zero_shot: break;
            }
        }

        std::vector<core::Demonstration> demos;
        InstanceResult res;
        res.instance_id = inst->id;
        res.knowledge_id = inst->knowledge_id;
        res.gold = core::to_int(inst->label);
        for (int p : picks) {
            demos.push_back(bank->demonstrations[static_cast<std::size_t>(p)]);
            res.demo_ids.push_back(demos.back().id);
        }
        res.shots = static_cast<int>(picks.size());

        prompt::Judgment j;
        try {
            j = judge_fn.judge(*inst, demos);
        } catch (const judge::JudgeError&) {
            ++report.judge_failures;
            if (report.judge_failures > failure_budget)
                throw EvalError("judge failures exceeded budget of " +
                                std::to_string(failure_budget));
            continue;
        }

        res.prediction = core::to_int(j.prediction);
        res.parse_ok = j.parse_ok;
        if (!j.parse_ok) ++parse_failures;

        report.counts.add(j.prediction, inst->label);
        shot_sum += res.shots;
        knowledge_shots[inst->knowledge_id] += res.shots;
        ++knowledge_n[inst->knowledge_id];
        report.per_knowledge[inst->knowledge_id].counts.add(j.prediction, inst->label);
        report.instances.push_back(std::move(res));
    }

    if (report.counts.total() == 0) throw EvalError("all instances failed judging");

    report.overall = metrics(report.counts);
    report.mean_shots = shot_sum / static_cast<double>(report.counts.total());
    report.parse_failure_rate =
        static_cast<double>(parse_failures) / static_cast<double>(report.counts.total());
    for (auto& [kid, breakdown] : report.per_knowledge)
        breakdown.mean_shots = knowledge_shots[kid] / static_cast<double>(knowledge_n[kid]);
    return report;
}

json report_to_json(const EvalReport& report) {
    const Metrics m = metrics(report.counts);  // recomputed from counts, not cached
    json per_k = json::object();
    for (const auto& [kid, b] : report.per_knowledge) {
        const Metrics km = metrics(b.counts);
        per_k[kid] = json{{"tp", b.counts.tp},
                          {"fp", b.counts.fp},
                          {"fn", b.counts.fn},
                          {"tn", b.counts.tn},
                          {"accuracy", km.accuracy},
                          {"precision", km.precision},
                          {"recall", km.recall},
                          {"f1", km.f1},
                          {"mean_shots", b.mean_shots}};
    }
    json insts = json::array();
    for (const auto& r : report.instances) {
        insts.push_back(json{{"instance_id", r.instance_id},
                             {"knowledge_id", r.knowledge_id},
                             {"prediction", r.prediction},
                             {"gold", r.gold},
                             {"parse_ok", r.parse_ok},
                             {"shots", r.shots},
                             {"demo_ids", r.demo_ids}});
    }
    return json{
        {"retriever", report.retriever},
        {"config_hash", report.config_hash},
        {"counts",
         json{{"tp", report.counts.tp},
              {"fp", report.counts.fp},
              {"fn", report.counts.fn},
              {"tn", report.counts.tn}}},
        {"accuracy", m.accuracy},
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"mean_shots", report.mean_shots},
        {"parse_failure_rate", report.parse_failure_rate},
        {"judge_failures", report.judge_failures},
        {"per_knowledge", std::move(per_k)},
        {"instances", std::move(insts)},
    };
}

void report_to_csv(const EvalReport& report, std::ostream& out) {
    const Metrics m = metrics(report.counts);
    out << "retriever,accuracy,precision,recall,f1,mean_shots\n";
    out << report.retriever << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ','
        << m.f1 << ',' << report.mean_shots << '\n';
}

}  // namespace flexsdr::eval
