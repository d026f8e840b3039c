#include "flexsdr/synth.hpp"

#include "flexsdr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace flexsdr::synth {

namespace {

std::string two_digits(int v) {
    std::ostringstream ss;
    ss << (v < 10 ? "0" : "") << v;
    return ss.str();
}

std::string three_digits(int v) {
    std::ostringstream ss;
    if (v < 100) ss << '0';
    if (v < 10) ss << '0';
    ss << v;
    return ss.str();
}

// Largest-remainder apportionment of `total` across weights, capped per
// cell; overflow moves to the next heaviest cell.
std::vector<int> apportion(int total, const std::vector<double>& weights, int cap) {
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    const std::size_t n = weights.size();
    std::vector<int> counts(n, 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = total * weights[i] / wsum;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
        ++counts[remainders[i].second];
        ++assigned;
    }
    // Cap and redistribute.
    int overflow = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (counts[i] > cap) {
            overflow += counts[i] - cap;
            counts[i] = cap;
        }
    }
    for (std::size_t i = 0; overflow > 0 && i < n; ++i) {
        const int room = cap - counts[i];
        const int add = std::min(room, overflow);
        counts[i] += add;
        overflow -= add;
    }
    return counts;
}

// Deterministic shuffle of a flag vector with `ones` leading ones.
std::vector<bool> shuffled_flags(int size, int ones, rng::SplitMix& rand) {
    std::vector<bool> flags(static_cast<std::size_t>(size), false);
    for (int i = 0; i < ones && i < size; ++i) flags[static_cast<std::size_t>(i)] = true;
    for (int i = size - 1; i > 0; --i) {
        const int j = static_cast<int>(rand.next_below(static_cast<std::uint64_t>(i + 1)));
        std::swap(flags[static_cast<std::size_t>(i)], flags[static_cast<std::size_t>(j)]);
    }
    return flags;
}

}  // namespace

void SynthConfig::validate() const {
    if (concepts < 1) throw std::invalid_argument("concepts must be >= 1");
    if (instances_per_concept < 1)
        throw std::invalid_argument("instances_per_concept must be >= 1");
    if (positive_ratio < 0.0 || positive_ratio > 1.0)
        throw std::invalid_argument("positive_ratio must be in [0, 1]");
    if (demos_pos < 0 || demos_neg < 0 || demos_pos + demos_neg < 1)
        throw std::invalid_argument("bank needs at least one demonstration");
    if (zero_shot_fraction < 0.0 || zero_shot_fraction > 1.0)
        throw std::invalid_argument("zero_shot_fraction must be in [0, 1]");
    if (two_hint_fraction < 0.0 || two_hint_fraction > 1.0)
        throw std::invalid_argument("two_hint_fraction must be in [0, 1]");
    if (train_fraction < 0.0 || train_fraction > 1.0)
        throw std::invalid_argument("train_fraction must be in [0, 1]");
}

core::Dataset generate(const SynthConfig& cfg) {
    cfg.validate();

    const int total_demos = cfg.demos_pos + cfg.demos_neg;
    const int n_hints = std::min(5, total_demos);
    const int per_concept = cfg.instances_per_concept;

    // Descending solvability ramp across concepts; overall count is exact.
    std::vector<double> weights(static_cast<std::size_t>(cfg.concepts));
    for (int c = 0; c < cfg.concepts; ++c)
        weights[static_cast<std::size_t>(c)] = static_cast<double>(cfg.concepts - c);
    const int solvable_total = static_cast<int>(
        std::lround(cfg.zero_shot_fraction * cfg.concepts * per_concept));
    const std::vector<int> solvable_counts = apportion(solvable_total, weights, per_concept);

    core::Dataset ds;
    for (int c = 0; c < cfg.concepts; ++c) {
        const std::string cc = two_digits(c);
        const std::string kid = "concept-" + cc;
        const std::string topic = "topic_" + cc;
        const std::string knowledge_text =
            "Knowledge concept " + cc + ": " + topic + " covering skill_a_" + cc +
            " and skill_b_" + cc + " for area_" + two_digits(c % 4) + ".";

        rng::SplitMix crng = rng::SplitMix::derived(
            cfg.seed, "synth-concept", {static_cast<std::uint64_t>(c)});

        // -- demonstration bank: the first n_hints demos carry one hint each
        core::DemonstrationBank bank;
        bank.knowledge_id = kid;
        std::vector<bool> demo_labels = shuffled_flags(total_demos, cfg.demos_pos, crng);
        for (int j = 0; j < total_demos; ++j) {
            core::Demonstration d;
            d.id = "demo-" + cc + "-" + std::to_string(j);
            d.knowledge_id = kid;
            d.label = demo_labels[static_cast<std::size_t>(j)] ? core::Label::match
                                                               : core::Label::mismatch;
            if (j < n_hints) {
                const std::string hint_tok = "hint_" + cc + "_" + std::to_string(j + 1);
                d.hints = {j + 1};
                d.question_text = "Demo exercise " + d.id + ": " + topic +
                                  " drill involving " + hint_tok + " pattern.";
                d.reason_text =
                    d.label == core::Label::match
                        ? "It exercises " + topic + " through the " + hint_tok + " pattern."
                        : "Despite mentioning " + hint_tok + ", it does not practice " + topic +
                              ".";
            } else {
                d.question_text = "Demo exercise " + d.id + ": generic practice filler_" +
                                  std::to_string(j) + " loosely tied to " + topic + ".";
                d.reason_text = d.label == core::Label::match
                                    ? "The drill still practices " + topic + " directly."
                                    : "The drill is generic and not about " + topic + ".";
            }
            bank.demonstrations.push_back(std::move(d));
        }
        ds.banks[kid] = std::move(bank);

        // -- instances
        const int pos_count = static_cast<int>(std::lround(cfg.positive_ratio * per_concept));
        const int train_count = static_cast<int>(std::lround(cfg.train_fraction * per_concept));
        std::vector<bool> labels = shuffled_flags(per_concept, pos_count, crng);
        std::vector<bool> solvable =
            shuffled_flags(per_concept, solvable_counts[static_cast<std::size_t>(c)], crng);
        std::vector<bool> in_train = shuffled_flags(per_concept, train_count, crng);

        for (int i = 0; i < per_concept; ++i) {
            core::TaggingInstance inst;
            inst.id = "inst-" + cc + "-" + three_digits(i);
            inst.knowledge_id = kid;
            inst.knowledge_text = knowledge_text;
            inst.label = labels[static_cast<std::size_t>(i)] ? core::Label::match
                                                             : core::Label::mismatch;
            inst.split = in_train[static_cast<std::size_t>(i)] ? core::Split::train
                                                               : core::Split::test;

            core::SimMeta meta;
            meta.zero_shot_solvable = solvable[static_cast<std::size_t>(i)];
            std::string hint_part;
            if (!meta.zero_shot_solvable) {
                const bool two = crng.next_unit() < cfg.two_hint_fraction && n_hints >= 2;
                const int h1 = 1 + static_cast<int>(crng.next_below(
                                       static_cast<std::uint64_t>(n_hints)));
                meta.required_hints.insert(h1);
                if (two) {
                    int h2 = 1 + static_cast<int>(crng.next_below(
                                     static_cast<std::uint64_t>(n_hints - 1)));
                    if (h2 >= h1) ++h2;
                    meta.required_hints.insert(h2);
                }
                for (int h : meta.required_hints)
                    hint_part += " needs hint_" + cc + "_" + std::to_string(h);
            }

            std::string topic_part;
            if (inst.label == core::Label::match) {
                topic_part = topic;
            } else {
                const int off =
                    cfg.concepts > 1
                        ? (c + 1 +
                           static_cast<int>(crng.next_below(
                               static_cast<std::uint64_t>(cfg.concepts - 1)))) %
                              cfg.concepts
                        : c;
                topic_part = "topic_" + two_digits(off) + " offtopic";
            }

            inst.question_text = "Question " + inst.id + ": exercise about " + topic_part +
                                 hint_part +
                                 (meta.zero_shot_solvable ? " plain_" + cc + " immediate" : "") +
                                 " ref_" + std::to_string(crng.next_u64() % 1000000) + ".";
            inst.sim_meta = std::move(meta);
            ds.instances.push_back(std::move(inst));
        }
    }
    return ds;
}

}  // namespace flexsdr::synth
