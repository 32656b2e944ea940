#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "protorel/dataset.hpp"
#include "protorel/errors.hpp"
#include "protorel/model.hpp"
#include "protorel/synthetic.hpp"
#include "protorel/trainer.hpp"

namespace protorel {

struct EvalConfig {
    std::vector<std::int64_t> ks{20, 50, 100};
    Split split = Split::test;
};

struct RunPaths {
    std::string out_dir = "runs";
    std::string dataset;
    std::string embeddings;
    std::string ledger;
    std::string checkpoint;
};

namespace configdetail {

inline void expect_keys(const nlohmann::json& j, const std::string& section,
                        std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok)
            throw ConfigError("config: unknown key '" + key + "' in section '" + section + "'");
    }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
    }
}

}  // namespace configdetail

// Declarative run configuration. Every section is optional and falls back to
// defaults; unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    RunPaths paths;
    SynthConfig synth;
    ModelConfig model;  // data-dependent widths resolved at train time
    TrainConfig train;  // carries the LossConfig
    EvalConfig eval;

    static RunConfig from_json(const nlohmann::json& j) {
        using namespace configdetail;
        expect_keys(j, "(root)", {"seed", "paths", "synth", "model", "train", "loss", "eval"});
        RunConfig c;
        c.model.semantic_dim = 128;
        read(j, "seed", c.seed);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            expect_keys(p, "paths", {"out_dir", "dataset", "embeddings", "ledger", "checkpoint"});
            read(p, "out_dir", c.paths.out_dir);
            read(p, "dataset", c.paths.dataset);
            read(p, "embeddings", c.paths.embeddings);
            read(p, "ledger", c.paths.ledger);
            read(p, "checkpoint", c.paths.checkpoint);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            expect_keys(s, "synth",
                        {"entity_classes", "predicate_classes", "embedding_dim", "visual_dim",
                         "union_dim", "scenes", "pairs_per_scene", "zipf_exponent", "noise",
                         "pair_signature_scale", "zero_shot_fraction", "background_ratio",
                         "train_fraction", "val_fraction", "predicate_groups",
                         "semantic_overlap", "visual_overlap"});
            read(s, "entity_classes", c.synth.entity_classes);
            read(s, "predicate_classes", c.synth.predicate_classes);
            read(s, "embedding_dim", c.synth.embedding_dim);
            read(s, "visual_dim", c.synth.visual_dim);
            read(s, "union_dim", c.synth.union_dim);
            read(s, "scenes", c.synth.scenes);
            read(s, "pairs_per_scene", c.synth.pairs_per_scene);
            read(s, "zipf_exponent", c.synth.zipf_exponent);
            read(s, "noise", c.synth.noise);
            read(s, "pair_signature_scale", c.synth.pair_signature_scale);
            read(s, "zero_shot_fraction", c.synth.zero_shot_fraction);
            read(s, "background_ratio", c.synth.background_ratio);
            read(s, "train_fraction", c.synth.train_fraction);
            read(s, "val_fraction", c.synth.val_fraction);
            read(s, "predicate_groups", c.synth.predicate_groups);
            read(s, "semantic_overlap", c.synth.semantic_overlap);
            read(s, "visual_overlap", c.synth.visual_overlap);
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            expect_keys(m, "model",
                        {"semantic_dim", "hidden_dim", "tau_init", "tau_min", "tau_max"});
            read(m, "semantic_dim", c.model.semantic_dim);
            read(m, "hidden_dim", c.model.hidden_dim);
            read(m, "tau_init", c.model.tau_init);
            read(m, "tau_min", c.model.tau_min);
            read(m, "tau_max", c.model.tau_max);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            expect_keys(t, "train",
                        {"lr", "batch_size", "iterations", "momentum", "eval_every", "grad_clip",
                         "lr_warmup", "lr_decay", "reweight", "reweight_beta"});
            read(t, "lr", c.train.lr);
            read(t, "batch_size", c.train.batch_size);
            read(t, "iterations", c.train.iterations);
            read(t, "momentum", c.train.momentum);
            read(t, "eval_every", c.train.eval_every);
            read(t, "grad_clip", c.train.grad_clip);
            read(t, "lr_warmup", c.train.lr_warmup);
            read(t, "lr_decay", c.train.lr_decay);
            read(t, "reweight", c.train.reweight);
            read(t, "reweight_beta", c.train.reweight_beta);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            expect_keys(l, "loss",
                        {"k1", "k2", "gamma1", "gamma2", "enable_pl", "enable_pr",
                         "class_weights"});
            read(l, "k1", c.train.loss.k1);
            read(l, "k2", c.train.loss.k2);
            read(l, "gamma1", c.train.loss.gamma1);
            read(l, "gamma2", c.train.loss.gamma2);
            read(l, "enable_pl", c.train.loss.enable_pl);
            read(l, "enable_pr", c.train.loss.enable_pr);
            if (l.contains("class_weights") && !l.at("class_weights").is_null())
                c.train.loss.class_weights =
                    l.at("class_weights").get<std::vector<double>>();
        }
        if (j.contains("eval")) {
            const auto& e = j.at("eval");
            expect_keys(e, "eval", {"ks", "split"});
            read(e, "ks", c.eval.ks);
            if (e.contains("split")) c.eval.split = parse_split(e.at("split").get<std::string>());
        }
        c.train.seed = c.seed;
        return c;
    }

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config '" + path + "': " + e.what());
        }
        try {
            return from_json(j);
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " (in '" + path + "')");
        }
    }

    // Fully materialized configuration, embedded into checkpoints and run
    // directories for provenance.
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["paths"] = {{"out_dir", paths.out_dir},
                      {"dataset", paths.dataset},
                      {"embeddings", paths.embeddings},
                      {"ledger", paths.ledger},
                      {"checkpoint", paths.checkpoint}};
        j["synth"] = {{"entity_classes", synth.entity_classes},
                      {"predicate_classes", synth.predicate_classes},
                      {"embedding_dim", synth.embedding_dim},
                      {"visual_dim", synth.visual_dim},
                      {"union_dim", synth.union_dim},
                      {"scenes", synth.scenes},
                      {"pairs_per_scene", synth.pairs_per_scene},
                      {"zipf_exponent", synth.zipf_exponent},
                      {"noise", synth.noise},
                      {"pair_signature_scale", synth.pair_signature_scale},
                      {"zero_shot_fraction", synth.zero_shot_fraction},
                      {"background_ratio", synth.background_ratio},
                      {"train_fraction", synth.train_fraction},
                      {"val_fraction", synth.val_fraction},
                      {"predicate_groups", synth.predicate_groups},
                      {"semantic_overlap", synth.semantic_overlap},
                      {"visual_overlap", synth.visual_overlap}};
        j["model"] = {{"semantic_dim", model.semantic_dim},
                      {"hidden_dim", model.hidden_dim},
                      {"tau_init", model.tau_init},
                      {"tau_min", model.tau_min},
                      {"tau_max", model.tau_max}};
        j["train"] = {{"lr", train.lr},
                      {"batch_size", train.batch_size},
                      {"iterations", train.iterations},
                      {"momentum", train.momentum},
                      {"eval_every", train.eval_every},
                      {"grad_clip", train.grad_clip},
                      {"lr_warmup", train.lr_warmup},
                      {"lr_decay", train.lr_decay},
                      {"reweight", train.reweight},
                      {"reweight_beta", train.reweight_beta}};
        j["loss"] = {{"k1", train.loss.k1},
                     {"k2", train.loss.k2},
                     {"gamma1", train.loss.gamma1},
                     {"gamma2", train.loss.gamma2},
                     {"enable_pl", train.loss.enable_pl},
                     {"enable_pr", train.loss.enable_pr},
                     {"class_weights", train.loss.class_weights
                                           ? nlohmann::json(*train.loss.class_weights)
                                           : nlohmann::json(nullptr)}};
        j["eval"] = {{"ks", eval.ks}, {"split", split_name(eval.split)}};
        return j;
    }
};

// Resolve a config path: as given, else under PROTOREL_CONFIG_DIR.
inline std::string resolve_config_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) return path;
    if (fs::path(path).is_relative()) {
        if (const char* dir = std::getenv("PROTOREL_CONFIG_DIR")) {
            const auto candidate = fs::path(dir) / path;
            if (fs::exists(candidate)) return candidate.string();
        }
    }
    return path;  // let the open fail with the original name
}

}  // namespace protorel
