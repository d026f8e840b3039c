#pragma once

#include "flexsdr/core.hpp"
#include "flexsdr/judge.hpp"
#include "flexsdr/policy.hpp"
#include "flexsdr/trainer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace flexsdr::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    long total() const { return tp + fp + fn + tn; }
    void add(core::Label prediction, core::Label gold);
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Positive class = match. Precision/recall are 0 when their denominator
// is 0; F1 is 0 when both are 0. Throws on an empty count.
Metrics metrics(const ConfusionCounts& c);

double cosine_similarity(const core::EmbeddingVector& a, const core::EmbeddingVector& b);

// K/Q similarity labelers: predict match from the knowledge/question
// similarity directly (no judge involved).
core::Label kq_threshold(const core::EmbeddingVector& x_knowledge,
                         const core::EmbeddingVector& x_question, double eta);
// Match iff the question ranks within the top-K most similar questions to
// the knowledge among `question_corpus` (which should contain x_question).
core::Label kq_topk(const core::EmbeddingVector& x_knowledge,
                    const core::EmbeddingVector& x_question,
                    const std::vector<core::EmbeddingVector>& question_corpus, int k);
// Q/Q mode: the nearest labeled question votes.
core::Label qq_nearest(const core::EmbeddingVector& x_question,
                       const std::vector<std::pair<core::EmbeddingVector, core::Label>>& labeled);

struct EtaGrid {
    double lo = 0.0;
    double hi = 1.0;
    double step = 0.05;
};

struct EtaSearchResult {
    double best_eta = 0.0;
    double best_f1 = 0.0;
    std::vector<std::pair<double, double>> table;  // (eta, f1)
};

// Exhaustive threshold search maximizing F1 over (similarity, gold) pairs;
// ties resolve to the smallest eta.
EtaSearchResult grid_search_eta(const std::vector<std::pair<double, core::Label>>& scored,
                                const EtaGrid& grid);

// ---------------------------------------------------------------------------
// Retriever evaluation
// ---------------------------------------------------------------------------

enum class RetrieverKind { policy, promptpg, random, similarity, zero_shot };

std::string retriever_name(RetrieverKind k);
RetrieverKind retriever_from_name(const std::string& name);  // throws listing valid names

struct RetrieverSpec {
    RetrieverKind kind = RetrieverKind::zero_shot;
    int shots = 4;  // K for random/similarity, max shots for policies
    const policy::PolicyParameters* params = nullptr;
    const policy::PromptPgParameters* promptpg = nullptr;
    bool stop_enabled = true;
    bool mask_selected = true;
    std::uint64_t seed = 7;  // random baseline
};

struct InstanceResult {
    std::string instance_id;
    std::string knowledge_id;
    int prediction = 0;
    int gold = 0;
    bool parse_ok = true;
    int shots = 0;
    std::vector<std::string> demo_ids;
};

struct KnowledgeBreakdown {
    ConfusionCounts counts;
    double mean_shots = 0.0;
};

struct EvalReport {
    ConfusionCounts counts;
    Metrics overall;
    double mean_shots = 0.0;
    double parse_failure_rate = 0.0;
    int judge_failures = 0;
    std::map<std::string, KnowledgeBreakdown> per_knowledge;
    std::vector<InstanceResult> instances;
    std::string retriever;
    std::string config_hash;
};

// Builds the demo sequence per retriever, judges once per instance with
// the final sequence, and accumulates counts. Judge failures beyond
// `failure_budget` abort the run.
EvalReport evaluate_retriever(const RetrieverSpec& spec,
                              const std::vector<const core::TaggingInstance*>& split,
                              const std::map<std::string, core::DemonstrationBank>& banks,
                              const trainer::EmbeddedTask& task, judge::Judge& judge_fn,
                              int failure_budget = 0, const std::string& config_hash = {});

nlohmann::json report_to_json(const EvalReport& report);
void report_to_csv(const EvalReport& report, std::ostream& out);

}  // namespace flexsdr::eval
