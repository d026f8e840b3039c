// flexsdr — adaptive demonstration retrieval for knowledge concept tagging.
//
// Subcommands:
//   synth     generate a seeded synthetic tagging task
//   train     train a retrieval policy (flexsdr / flexreticr / reticl / promptpg)
//   evaluate  score a retriever on a dataset split
//   tag       judge one (knowledge, question) pair end to end
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include "flexsdr/core.hpp"
#include "flexsdr/eval.hpp"
#include "flexsdr/run_config.hpp"
#include "flexsdr/synth.hpp"
#include "flexsdr/trainer.hpp"
#include "flexsdr/util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using flexsdr::cli::ConfigError;
using flexsdr::cli::RunConfig;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kConfigError = 2;

std::string timestamp_name() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm_utc);
    return buf;
}

std::filesystem::path make_run_dir(const RunConfig& cfg, const std::string& run_name) {
    const std::string name =
        run_name.empty() ? timestamp_name() + "-" + cfg.hash().substr(0, 8) : run_name;
    std::filesystem::path dir = std::filesystem::path(cfg.output_dir) / name;
    std::filesystem::create_directories(dir);
    return dir;
}

void write_config_echo(const RunConfig& cfg, const std::filesystem::path& dir) {
    json echo = cfg.to_json();
    echo["config_hash"] = cfg.hash();
    flexsdr::util::write_file(dir / "config.json", echo.dump(2) + "\n");
}

struct CommonFlags {
    std::string config_file;
    std::string dataset;
    std::string out_dir;
    std::string run_name;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_file, "JSON config file");
    cmd->add_option("--dataset", flags.dataset, "dataset file (JSON lines)");
    cmd->add_option("--out", flags.out_dir, "output directory root");
    cmd->add_option("--run-name", flags.run_name, "run directory name (default: timestamp-hash)");
    cmd->add_option("--seed", flags.seed, "master seed");
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig cfg;
    if (!flags.config_file.empty()) cfg = RunConfig::load(flags.config_file);
    if (!flags.dataset.empty()) cfg.dataset = flags.dataset;
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (flags.seed) {
        cfg.seed = *flags.seed;
        cfg.propagate_seed();
    }
    return cfg;
}

flexsdr::core::Dataset load_dataset_checked(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("no dataset path given");
    if (!std::filesystem::exists(cfg.dataset))
        throw ConfigError("dataset file does not exist: " + cfg.dataset);
    return flexsdr::core::load_dataset(cfg.dataset);
}

std::vector<const flexsdr::core::TaggingInstance*> pick_split(
    const flexsdr::core::Dataset& ds, const std::string& split) {
    const flexsdr::core::Split want = flexsdr::core::split_from_name(split);
    std::vector<const flexsdr::core::TaggingInstance*> out;
    for (const auto& inst : ds.instances)
        if (inst.split == want) out.push_back(&inst);
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const flexsdr::synth::SynthConfig& synth_cfg, const std::string& out_path) {
    if (out_path.empty()) {
        std::cerr << "synth: --out is required\n";
        return kConfigError;
    }
    try {
        synth_cfg.validate();
    } catch (const std::invalid_argument& e) {
        std::cerr << "synth: " << e.what() << "\n";
        return kConfigError;
    }
    const flexsdr::core::Dataset ds = flexsdr::synth::generate(synth_cfg);
    flexsdr::core::save_dataset(ds, out_path);
    std::cout << "wrote " << ds.instances.size() << " instances and " << ds.banks.size()
              << " banks to " << out_path << "\n";
    return kOk;
}

int cmd_train(const CommonFlags& flags, const std::string& algo, std::optional<int> episodes,
              std::optional<int> max_shots, std::optional<int> hidden_dim,
              std::optional<double> lr, std::optional<int> batch_size) {
    RunConfig cfg;
    try {
        cfg = resolve_config(flags);
        if (!algo.empty())
            cfg.train.apply_algorithm_preset(flexsdr::trainer::algorithm_from_name(algo));
        if (episodes) cfg.train.episodes = *episodes;
        if (max_shots) cfg.train.reward.max_shots = *max_shots;
        if (hidden_dim) cfg.train.hidden_dim = *hidden_dim;
        if (lr) cfg.train.learning_rate = *lr;
        if (batch_size) cfg.train.batch_size = *batch_size;
        cfg.train.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    const flexsdr::core::Dataset ds = load_dataset_checked(cfg);
    auto embedder = flexsdr::cli::make_embedder(cfg.embedder);
    auto judge_fn = flexsdr::cli::make_judge(cfg.judge);

    const std::filesystem::path run_dir = make_run_dir(cfg, flags.run_name);
    write_config_echo(cfg, run_dir);

    const flexsdr::trainer::TrainResult result =
        flexsdr::trainer::train(ds, *embedder, *judge_fn, cfg.train, run_dir, cfg.hash());
    std::cout << "checkpoint: " << result.checkpoint_file.string() << "\n"
              << "log:        " << result.log_file.string() << "\n";
    return kOk;
}

int cmd_evaluate(const CommonFlags& flags, const std::string& retriever,
                 const std::string& checkpoint, std::optional<int> k, const std::string& split,
                 bool no_stop, bool csv) {
    RunConfig cfg;
    flexsdr::eval::RetrieverKind kind;
    try {
        cfg = resolve_config(flags);
        if (!retriever.empty()) cfg.eval.retriever = retriever;
        if (!checkpoint.empty()) cfg.eval.checkpoint = checkpoint;
        if (k) cfg.eval.k = *k;
        if (!split.empty()) cfg.eval.split = split;
        if (no_stop) cfg.eval.stop = false;
        if (csv) cfg.eval.csv = true;
        kind = flexsdr::eval::retriever_from_name(cfg.eval.retriever);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    const flexsdr::core::Dataset ds = load_dataset_checked(cfg);
    auto embedder = flexsdr::cli::make_embedder(cfg.embedder);
    auto judge_fn = flexsdr::cli::make_judge(cfg.judge);

    const auto instances = pick_split(ds, cfg.eval.split);
    if (instances.empty())
        throw ConfigError("split \"" + cfg.eval.split + "\" is empty in " + cfg.dataset);
    const flexsdr::trainer::EmbeddedTask task = flexsdr::trainer::embed_task(ds, *embedder);

    flexsdr::eval::RetrieverSpec spec;
    spec.kind = kind;
    spec.shots = cfg.eval.k;
    spec.stop_enabled = cfg.eval.stop;
    spec.seed = cfg.seed;

    std::optional<flexsdr::policy::PolicyParameters> params;
    std::optional<flexsdr::policy::PromptPgParameters> pg_params;
    try {
        if (kind == flexsdr::eval::RetrieverKind::policy) {
            if (cfg.eval.checkpoint.empty())
                throw ConfigError("policy retriever requires --checkpoint");
            params = flexsdr::policy::load_policy_checkpoint(cfg.eval.checkpoint,
                                                             embedder->dimension());
            spec.params = &*params;
        } else if (kind == flexsdr::eval::RetrieverKind::promptpg) {
            if (cfg.eval.checkpoint.empty())
                throw ConfigError("promptpg retriever requires --checkpoint");
            pg_params = flexsdr::policy::load_promptpg_checkpoint(cfg.eval.checkpoint,
                                                                  embedder->dimension());
            spec.promptpg = &*pg_params;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const flexsdr::policy::PolicyError& e) {
        throw ConfigError(e.what());
    }

    const flexsdr::eval::EvalReport report = flexsdr::eval::evaluate_retriever(
        spec, instances, ds.banks, task, *judge_fn, cfg.eval.failure_budget, cfg.hash());

    const std::filesystem::path run_dir = make_run_dir(cfg, flags.run_name);
    write_config_echo(cfg, run_dir);
    flexsdr::util::write_file(run_dir / "report.json",
                              flexsdr::eval::report_to_json(report).dump(2) + "\n");
    if (cfg.eval.csv) {
        std::ofstream out(run_dir / "report.csv");
        flexsdr::eval::report_to_csv(report, out);
    }

    std::cout << "retriever=" << report.retriever << " accuracy=" << report.overall.accuracy
              << " precision=" << report.overall.precision << " recall=" << report.overall.recall
              << " f1=" << report.overall.f1 << " mean_shots=" << report.mean_shots << "\n"
              << "report: " << (run_dir / "report.json").string() << "\n";
    return kOk;
}

int cmd_tag(const CommonFlags& flags, const std::string& instance_id,
            const std::string& knowledge_text, const std::string& knowledge_id,
            const std::string& question_text, const std::string& checkpoint, bool as_json) {
    RunConfig cfg = resolve_config(flags);

    flexsdr::core::Dataset ds;
    if (!cfg.dataset.empty()) ds = load_dataset_checked(cfg);

    flexsdr::core::TaggingInstance query;
    if (!instance_id.empty()) {
        const auto it = std::find_if(ds.instances.begin(), ds.instances.end(),
                                     [&](const auto& inst) { return inst.id == instance_id; });
        if (it == ds.instances.end())
            throw ConfigError("instance \"" + instance_id + "\" not found in dataset");
        query = *it;
    } else {
        if (knowledge_text.empty() || question_text.empty())
            throw ConfigError("tag needs --instance-id, or --knowledge and --question");
        query.id = "cli-query";
        query.knowledge_id = knowledge_id.empty() ? "cli-knowledge" : knowledge_id;
        query.knowledge_text = knowledge_text;
        query.question_text = question_text;
    }

    auto judge_fn = flexsdr::cli::make_judge(cfg.judge);

    std::vector<flexsdr::core::Demonstration> demos;
    if (!checkpoint.empty()) {
        const auto bank_it = ds.banks.find(query.knowledge_id);
        if (bank_it == ds.banks.end())
            throw ConfigError("no demonstration bank for knowledge id \"" + query.knowledge_id +
                              "\"");
        auto embedder = flexsdr::cli::make_embedder(cfg.embedder);
        const flexsdr::policy::PolicyParameters params =
            flexsdr::policy::load_policy_checkpoint(checkpoint, embedder->dimension());
        const flexsdr::policy::Vec xk = embedder->embed(query.knowledge_text);
        const flexsdr::policy::Vec xq = embedder->embed(query.question_text);
        flexsdr::policy::Mat bank_x(static_cast<long>(bank_it->second.demonstrations.size()),
                                    embedder->dimension());
        for (std::size_t i = 0; i < bank_it->second.demonstrations.size(); ++i)
            bank_x.row(static_cast<long>(i)) =
                embedder->embed(bank_it->second.demonstrations[i].question_text).transpose();
        const std::vector<int> picks = flexsdr::trainer::greedy_selection(
            params, xk, xq, bank_x, cfg.train.reward.max_shots, cfg.train.reward.stop_enabled,
            cfg.train.mask_selected);
        for (int p : picks)
            demos.push_back(bank_it->second.demonstrations[static_cast<std::size_t>(p)]);
    }

    const flexsdr::prompt::Judgment j = judge_fn->judge(query, demos);

    if (as_json) {
        json out{{"prediction", flexsdr::core::to_int(j.prediction)},
                 {"parse_ok", j.parse_ok},
                 {"raw_text", j.raw_text},
                 {"demo_ids", json::array()}};
        for (const auto& d : demos) out["demo_ids"].push_back(d.id);
        std::cout << out.dump() << "\n";
    } else {
        std::cout << "prediction: " << flexsdr::core::to_int(j.prediction)
                  << (j.parse_ok ? "" : " (parse fallback)") << "\n";
        std::cout << "demos used: ";
        if (demos.empty()) {
            std::cout << "(none, zero-shot)";
        } else {
            for (std::size_t i = 0; i < demos.size(); ++i)
                std::cout << (i ? ", " : "") << demos[i].id;
        }
        std::cout << "\nraw response: " << j.raw_text << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlexSDR: adaptive demonstration retrieval for knowledge concept tagging"};
    app.require_subcommand(1);

    // -- synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a seeded synthetic tagging task");
    flexsdr::synth::SynthConfig synth_cfg;
    std::string synth_out;
    synth_cmd->add_option("--out", synth_out, "output dataset path")->required();
    synth_cmd->add_option("--concepts", synth_cfg.concepts, "number of knowledge concepts");
    synth_cmd->add_option("--instances", synth_cfg.instances_per_concept,
                          "instances per concept");
    synth_cmd->add_option("--positive-ratio", synth_cfg.positive_ratio,
                          "fraction of matching instances");
    synth_cmd->add_option("--demos-pos", synth_cfg.demos_pos, "positive demos per bank");
    synth_cmd->add_option("--demos-neg", synth_cfg.demos_neg, "negative demos per bank");
    synth_cmd->add_option("--zero-shot-fraction", synth_cfg.zero_shot_fraction,
                          "fraction solvable without demonstrations");
    synth_cmd->add_option("--two-hint-fraction", synth_cfg.two_hint_fraction,
                          "fraction of unsolvable instances needing two hints");
    synth_cmd->add_option("--train-fraction", synth_cfg.train_fraction, "train split fraction");
    synth_cmd->add_option("--seed", synth_cfg.seed, "generation seed");

    // -- train
    auto* train_cmd = app.add_subcommand("train", "train a retrieval policy");
    CommonFlags train_flags;
    add_common(train_cmd, train_flags);
    std::string train_algo;
    std::optional<int> train_episodes, train_max_shots, train_hidden, train_batch;
    std::optional<double> train_lr;
    train_cmd->add_option("--algo", train_algo,
                          "algorithm preset: flexsdr, flexreticr, reticl, promptpg");
    train_cmd->add_option("--episodes", train_episodes, "training episodes");
    train_cmd->add_option("--max-shots", train_max_shots, "maximum demonstrations per query");
    train_cmd->add_option("--hidden-dim", train_hidden, "policy hidden size");
    train_cmd->add_option("--lr", train_lr, "learning rate");
    train_cmd->add_option("--batch-size", train_batch, "instances per episode");

    // -- evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a retriever on a dataset split");
    CommonFlags eval_flags;
    add_common(eval_cmd, eval_flags);
    std::string eval_retriever, eval_checkpoint, eval_split;
    std::optional<int> eval_k;
    bool eval_no_stop = false, eval_csv = false;
    eval_cmd->add_option("--retriever", eval_retriever,
                         "policy, promptpg, random, similarity, zero-shot");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "policy checkpoint file");
    eval_cmd->add_option("--k", eval_k, "shots for fixed-size retrievers / max shots for policy");
    eval_cmd->add_option("--split", eval_split, "dataset split: train or test");
    eval_cmd->add_flag("--no-stop", eval_no_stop, "hide the stop slot from policy retrievers");
    eval_cmd->add_flag("--csv", eval_csv, "also write report.csv");

    // -- tag
    auto* tag_cmd = app.add_subcommand("tag", "judge one (knowledge, question) pair");
    CommonFlags tag_flags;
    add_common(tag_cmd, tag_flags);
    std::string tag_instance, tag_knowledge, tag_knowledge_id, tag_question, tag_checkpoint;
    bool tag_json = false;
    tag_cmd->add_option("--instance-id", tag_instance, "tag an instance from the dataset");
    tag_cmd->add_option("--knowledge", tag_knowledge, "knowledge definition text");
    tag_cmd->add_option("--knowledge-id", tag_knowledge_id,
                        "knowledge id for demonstration bank lookup");
    tag_cmd->add_option("--question", tag_question, "question text");
    tag_cmd->add_option("--checkpoint", tag_checkpoint, "policy checkpoint for retrieval");
    tag_cmd->add_flag("--json", tag_json, "print the judgment as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth_cfg, synth_out);
        if (train_cmd->parsed())
            return cmd_train(train_flags, train_algo, train_episodes, train_max_shots,
                             train_hidden, train_lr, train_batch);
        if (eval_cmd->parsed())
            return cmd_evaluate(eval_flags, eval_retriever, eval_checkpoint, eval_k, eval_split,
                                eval_no_stop, eval_csv);
        if (tag_cmd->parsed())
            return cmd_tag(tag_flags, tag_instance, tag_knowledge, tag_knowledge_id, tag_question,
                           tag_checkpoint, tag_json);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const flexsdr::core::DatasetError& e) {
        std::cerr << "dataset error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kConfigError;
}
