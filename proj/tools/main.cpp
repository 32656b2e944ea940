// Command-line front end: data generation, training, evaluation, analysis
// and self-verification, all driven by a declarative JSON config with flag
// overrides. Every command writes its outputs into a fresh run directory
// named by timestamp and seed.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "protorel/checkpoint.hpp"
#include "protorel/config.hpp"
#include "protorel/dataset.hpp"
#include "protorel/embeddings.hpp"
#include "protorel/metrics.hpp"
#include "protorel/selfcheck.hpp"
#include "protorel/synthetic.hpp"
#include "protorel/trainer.hpp"

namespace fs = std::filesystem;
using namespace protorel;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::string make_run_dir(const std::string& out_dir, std::uint64_t seed) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    fs::path base = fs::path(out_dir) / (std::string(stamp) + "-seed" + std::to_string(seed));
    fs::path dir = base;
    for (int i = 1; fs::exists(dir); ++i) dir = base.string() + "." + std::to_string(i);
    fs::create_directories(dir);
    return dir.string();
}

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string dataset, embeddings, ledger, checkpoint;
};

RunConfig load_run_config(const CommonArgs& a) {
    RunConfig cfg;
    if (!a.config_path.empty()) cfg = RunConfig::load(resolve_config_path(a.config_path));
    if (a.seed) {
        cfg.seed = *a.seed;
        cfg.train.seed = *a.seed;
    }
    if (!a.out_dir.empty()) cfg.paths.out_dir = a.out_dir;
    if (!a.dataset.empty()) cfg.paths.dataset = a.dataset;
    if (!a.embeddings.empty()) cfg.paths.embeddings = a.embeddings;
    if (!a.ledger.empty()) cfg.paths.ledger = a.ledger;
    if (!a.checkpoint.empty()) cfg.paths.checkpoint = a.checkpoint;
    return cfg;
}

void write_provenance(const RunConfig& cfg, const std::string& run_dir) {
    std::ofstream out(fs::path(run_dir) / "run_config.json");
    out << cfg.to_json().dump(2) << '\n';
}

int cmd_gen_data(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args);
    auto res = gen_synthetic(cfg.synth, cfg.seed);
    const std::string dir = make_run_dir(cfg.paths.out_dir, cfg.seed);
    export_dataset(res.dataset, (fs::path(dir) / "dataset.jsonl").string());
    save_embeddings(res.embeddings, (fs::path(dir) / "embeddings.txt").string());
    save_ledger(res.ledger, (fs::path(dir) / "ledger.json").string());
    write_provenance(cfg, dir);

    std::int64_t n_train = 0, n_val = 0, n_test = 0, n_bg = 0;
    for (const auto& s : res.dataset.samples) {
        n_train += s.split == Split::train;
        n_val += s.split == Split::val;
        n_test += s.split == Split::test;
        n_bg += s.predicate_class == 0;
    }
    std::printf("run dir:    %s\n", dir.c_str());
    std::printf("samples:    %zu (train %lld / val %lld / test %lld, background %lld)\n",
                res.dataset.samples.size(), (long long)n_train, (long long)n_val,
                (long long)n_test, (long long)n_bg);
    std::printf("classes:    %lld entities, %lld predicates (+background)\n",
                (long long)res.dataset.num_entity_classes(),
                (long long)res.dataset.num_predicate_classes());
    std::printf("zero-shot:  %zu withheld triplet types\n", res.ledger.size());
    return kExitOk;
}

int cmd_train(const CommonArgs& args, std::optional<double> lr,
              std::optional<std::int64_t> iters, std::optional<std::int64_t> batch,
              std::optional<bool> pl, std::optional<bool> pr) {
    RunConfig cfg = load_run_config(args);
    if (lr) cfg.train.lr = *lr;
    if (iters) cfg.train.iterations = *iters;
    if (batch) cfg.train.batch_size = *batch;
    if (pl) cfg.train.loss.enable_pl = *pl;
    if (pr) cfg.train.loss.enable_pr = *pr;
    if (cfg.paths.dataset.empty() || cfg.paths.embeddings.empty())
        throw ConfigError("train: dataset and embeddings paths are required");

    Dataset ds = load_dataset(cfg.paths.dataset);
    WordEmbeddingTable emb = load_embeddings(cfg.paths.embeddings, [&] {
        // peek the width from the first record
        std::ifstream in(cfg.paths.embeddings);
        std::string line;
        if (!std::getline(in, line) || line.empty())
            throw FormatError("embeddings file is empty");
        std::int64_t count = 0;
        const char* p = line.c_str();
        while (*p && *p != ' ' && *p != '\t') ++p;
        char* end = nullptr;
        for (double v = std::strtod(p, &end); end != p; v = std::strtod(p, &end)) {
            (void)v;
            ++count;
            p = end;
        }
        return count;
    }());

    const std::string dir = make_run_dir(cfg.paths.out_dir, cfg.seed);
    cfg.train.checkpoint_path = (fs::path(dir) / "checkpoint.json").string();
    write_provenance(cfg, dir);
    auto res = train(ds, emb, cfg.model, cfg.train, cfg.to_json());
    res.log.write_csv((fs::path(dir) / "train_log.csv").string());

    const auto& last = res.log.records.back();
    std::printf("run dir:    %s\n", dir.c_str());
    std::printf("iterations: %lld (%.1f s)\n", (long long)last.iteration, last.seconds);
    std::printf("final loss: total %.6f (e_sim %.6f, e_euc %.6f, r_sim %.6f, r_euc %.6f)\n",
                last.loss.total, last.loss.e_sim, last.loss.e_euc, last.loss.r_sim,
                last.loss.r_euc);
    std::printf("tau:        %.4f\n", last.tau);
    std::printf("checkpoint: %s\n", cfg.train.checkpoint_path.c_str());
    return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& split_flag, const std::string& ks_flag) {
    RunConfig cfg = load_run_config(args);
    if (cfg.paths.checkpoint.empty() || cfg.paths.dataset.empty() ||
        cfg.paths.embeddings.empty())
        throw ConfigError("eval: checkpoint, dataset and embeddings paths are required");
    if (!split_flag.empty()) cfg.eval.split = parse_split(split_flag);
    if (!ks_flag.empty()) {
        cfg.eval.ks.clear();
        std::istringstream ss(ks_flag);
        for (std::string tok; std::getline(ss, tok, ',');)
            cfg.eval.ks.push_back(std::stoll(tok));
    }

    Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    Dataset ds = load_dataset(cfg.paths.dataset);
    WordEmbeddingTable emb = load_embeddings(cfg.paths.embeddings, ck.params.cfg.embedding_dim);
    if (ds.visual_dim != ck.params.cfg.visual_dim || ds.union_dim != ck.params.cfg.union_dim ||
        ds.num_predicate_classes() != ck.params.cfg.num_predicates)
        throw ShapeError("eval: dataset widths (" + std::to_string(ds.visual_dim) + "/" +
                         std::to_string(ds.union_dim) + ", N=" +
                         std::to_string(ds.num_predicate_classes()) +
                         ") do not match the checkpoint model (" +
                         std::to_string(ck.params.cfg.visual_dim) + "/" +
                         std::to_string(ck.params.cfg.union_dim) + ", N=" +
                         std::to_string(ck.params.cfg.num_predicates) + ")");

    std::optional<ZeroShotLedger> ledger;
    if (!cfg.paths.ledger.empty()) ledger = load_ledger(cfg.paths.ledger);

    // the no-matching baseline head classifies with its linear layer
    PredictionHead head = PredictionHead::prototype;
    if (ck.run_config.contains("loss") && ck.run_config["loss"].contains("enable_pl") &&
        !ck.run_config["loss"]["enable_pl"].get<bool>())
        head = PredictionHead::linear;

    EvalReport report = evaluate(ck.params, ds, emb, cfg.eval.split,
                                 ledger ? &*ledger : nullptr, cfg.eval.ks, head);

    const std::string dir = make_run_dir(cfg.paths.out_dir, cfg.seed);
    {
        std::ofstream out(fs::path(dir) / "eval_report.json");
        out << report.to_json().dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "eval_report.txt");
        out << report.table();
    }
    std::printf("run dir: %s\n", dir.c_str());
    std::fputs(report.table().c_str(), stdout);
    return kExitOk;
}

int cmd_analyze(const CommonArgs& args, const std::string& split_flag) {
    RunConfig cfg = load_run_config(args);
    if (cfg.paths.checkpoint.empty() || cfg.paths.dataset.empty() ||
        cfg.paths.embeddings.empty())
        throw ConfigError("analyze: checkpoint, dataset and embeddings paths are required");
    if (!split_flag.empty()) cfg.eval.split = parse_split(split_flag);

    Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    Dataset ds = load_dataset(cfg.paths.dataset);
    WordEmbeddingTable emb = load_embeddings(cfg.paths.embeddings, ck.params.cfg.embedding_dim);

    EvalReport report = evaluate(ck.params, ds, emb, cfg.eval.split, nullptr, {20});
    const std::string dir = make_run_dir(cfg.paths.out_dir, cfg.seed);
    export_embeddings(ck.params, ds, emb, cfg.eval.split,
                      (fs::path(dir) / "embeddings.csv").string());
    nlohmann::json j{{"iv_entities", report.iv_entities},
                     {"iivr_entities", report.iivr_entities},
                     {"iv_relations", report.iv_relations},
                     {"iivr_relations", report.iivr_relations},
                     {"split", split_name(cfg.eval.split)},
                     {"pairs", report.pairs}};
    {
        std::ofstream out(fs::path(dir) / "analysis.json");
        out << j.dump(2) << '\n';
    }
    std::printf("run dir: %s\n", dir.c_str());
    std::printf("IV  entities:  %.6f   relations: %.6f\n", report.iv_entities,
                report.iv_relations);
    std::printf("IIVR entities: %.6f   relations: %.6f\n", report.iivr_entities,
                report.iivr_relations);
    std::printf("embeddings csv: %s\n", (fs::path(dir) / "embeddings.csv").string().c_str());
    return kExitOk;
}

int cmd_selfcheck(int trials) {
    SelfcheckOptions opt;
    opt.trials_per_op = trials;
    auto report = run_selfcheck(opt);
    for (const auto& c : report.checks)
        std::printf("%-48s max-err %10.3e  limit %.0e  %s\n", c.name.c_str(), c.max_err,
                    c.limit, c.pass ? "ok" : "FAIL");
    std::printf("selfcheck: %s (%zu checks, %.1f s)\n", report.pass ? "PASS" : "FAIL",
                report.checks.size(), report.seconds);
    return report.pass ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-based relation recognition: synthetic data, training, evaluation"};
    app.require_subcommand(1);

    CommonArgs args;
    std::optional<double> lr;
    std::optional<std::int64_t> iters, batch;
    std::string pl_flag, pr_flag, split_flag, ks_flag;
    int selfcheck_trials = 20;

    auto add_common = [&](CLI::App* sub, bool io_paths) {
        sub->add_option("-c,--config", args.config_path, "JSON run config");
        sub->add_option("--seed", args.seed, "override the run seed");
        sub->add_option("--out-dir", args.out_dir, "base directory for run outputs");
        if (io_paths) {
            sub->add_option("--dataset", args.dataset, "dataset jsonl path");
            sub->add_option("--embeddings", args.embeddings, "word embedding text file");
            sub->add_option("--ledger", args.ledger, "zero-shot ledger json");
            sub->add_option("--checkpoint", args.checkpoint, "model checkpoint json");
        }
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, false);

    auto* tr = app.add_subcommand("train", "train on a dataset");
    add_common(tr, true);
    tr->add_option("--lr", lr, "learning rate override");
    tr->add_option("--iters", iters, "iteration count override");
    tr->add_option("--batch", batch, "batch size override");
    tr->add_option("--pl", pl_flag, "prototype matching losses on|off")
        ->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--pr", pr_flag, "prototype regularization on|off")
        ->check(CLI::IsMember({"on", "off"}));

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev, true);
    ev->add_option("--split", split_flag, "train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--ks", ks_flag, "comma-separated K values");

    auto* an = app.add_subcommand("analyze", "representation statistics and embedding export");
    add_common(an, true);
    an->add_option("--split", split_flag, "train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));

    auto* sc = app.add_subcommand("selfcheck", "gradient checks and loss oracles");
    sc->add_option("--trials", selfcheck_trials, "random points per op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (tr->parsed()) {
            std::optional<bool> pl, pr;
            if (!pl_flag.empty()) pl = pl_flag == "on";
            if (!pr_flag.empty()) pr = pr_flag == "on";
            return cmd_train(args, lr, iters, batch, pl, pr);
        }
        if (ev->parsed()) return cmd_eval(args, split_flag, ks_flag);
        if (an->parsed()) return cmd_analyze(args, split_flag);
        if (sc->parsed()) return cmd_selfcheck(selfcheck_trials);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitConfig;
}
