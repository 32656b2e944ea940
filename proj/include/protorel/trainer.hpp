#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "protorel/checkpoint.hpp"
#include "protorel/dataset.hpp"
#include "protorel/embeddings.hpp"
#include "protorel/errors.hpp"
#include "protorel/losses.hpp"
#include "protorel/model.hpp"
#include "protorel/rng.hpp"

namespace protorel {

struct TrainConfig {
    double lr = 1e-3;
    std::int64_t batch_size = 8;
    std::int64_t iterations = 2000;
    double momentum = 0.0;
    std::uint64_t seed = 0;
    LossConfig loss;
    std::int64_t eval_every = 100;
    std::string checkpoint_path;  // empty: caller saves
    double grad_clip = 0.0;       // global L2 cap, 0 = off
    std::int64_t lr_warmup = 0;   // linear warmup iterations, 0 = off
    double lr_decay = 1.0;        // per-iteration multiplicative decay
    bool reweight = false;        // class-balanced weights on the cosine loss
    double reweight_beta = 0.9999;

    void validate() const {
        if (!(lr > 0) && lr != 0.0) throw ConfigError("train: lr must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
        if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0,1)");
        if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
        if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
        if (lr_warmup < 0) throw ConfigError("train: lr_warmup must be >= 0");
        if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("train: lr_decay must be in (0,1]");
    }
};

struct TrainRecord {
    std::int64_t iteration = 0;
    LossBreakdown loss;
    double tau = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;

    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write train log '" + path + "'");
        out << "iteration,l_e_sim,l_e_euc,l_r_sim,l_r_euc,total,tau,seconds\n";
        char buf[32];
        auto put = [&](double v, char sep) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << buf << sep;
        };
        for (const auto& r : records) {
            out << r.iteration << ',';
            put(r.loss.e_sim, ',');
            put(r.loss.e_euc, ',');
            put(r.loss.r_sim, ',');
            put(r.loss.r_euc, ',');
            put(r.loss.total, ',');
            put(r.tau, ',');
            put(r.seconds, '\n');
        }
        if (!out) throw IoError("write failed on '" + path + "'");
    }
};

struct TrainResult {
    ModelParams params;
    TrainLog log;
};

// One plain/momentum SGD update. Velocity must be zero-initialized to the
// weight size on first use.
inline void sgd_update(std::vector<double>& w, const std::vector<double>& g, double lr,
                       double momentum, std::vector<double>& velocity) {
    if (momentum == 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        return;
    }
    if (velocity.size() != w.size()) velocity.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        velocity[i] = momentum * velocity[i] + g[i];
        w[i] -= lr * velocity[i];
    }
}

struct SgdState {
    std::map<std::string, std::vector<double>> velocity;
};

// Apply one SGD step over every parameter tensor from its accumulated
// gradient. Non-finite gradients abort with the tensor named.
inline void sgd_step(ModelParams& params, double lr, double momentum, SgdState& state) {
    for (auto& [name, t] : params.named()) {
        for (double gv : t->grad)
            if (!std::isfinite(gv))
                throw NumericError("non-finite gradient in tensor '" + name + "'");
        sgd_update(t->data, t->grad, lr, momentum, state.velocity[name]);
    }
}

inline ModelConfig resolve_model_config(ModelConfig base, const Dataset& ds,
                                        const WordEmbeddingTable& emb) {
    base.embedding_dim = emb.dim();
    base.visual_dim = ds.visual_dim;
    base.union_dim = ds.union_dim;
    base.num_predicates = ds.num_predicate_classes();
    base.validate();
    return base;
}

// Mini-batch SGD over the train split. Deterministic in (dataset, configs,
// seed): parameter init and batch order derive from the seed alone, and the
// only wall-clock dependence is the seconds column of the log.
inline TrainResult train(const Dataset& ds, const WordEmbeddingTable& emb,
                         const ModelConfig& model_cfg_in, const TrainConfig& cfg,
                         const nlohmann::json& provenance = {}) {
    cfg.validate();
    const ModelConfig model_cfg = resolve_model_config(model_cfg_in, ds, emb);

    std::vector<std::int64_t> train_idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].split == Split::train)
            train_idx.push_back(static_cast<std::int64_t>(i));
    if (train_idx.empty()) throw ConfigError("train: dataset has no train split");

    LossConfig loss_cfg = cfg.loss;
    loss_cfg.validate(model_cfg.num_predicates);
    if (cfg.reweight) {
        std::vector<std::int64_t> counts(
            static_cast<std::size_t>(model_cfg.num_predicates + 1), 0);
        for (auto i : train_idx)
            ++counts[static_cast<std::size_t>(ds.samples[static_cast<std::size_t>(i)].predicate_class)];
        loss_cfg.class_weights = class_balanced_weights(counts, cfg.reweight_beta);
    }

    TrainResult res;
    res.params.cfg = model_cfg;
    res.params.init(cfg.seed);

    const Tensor t_pred = stack_predicate_embeddings(ds, emb);
    const auto n_train = static_cast<std::int64_t>(train_idx.size());
    const std::int64_t batch = std::min<std::int64_t>(cfg.batch_size, n_train);

    Rng shuffle_rng(derive_seed(cfg.seed, 0xBA7C4));
    std::vector<std::int64_t> order = train_idx;
    shuffle_rng.shuffle(order);
    std::int64_t cursor = 0;

    SgdState sgd;
    const auto t_start = std::chrono::steady_clock::now();

    auto dump_last_good = [&]() {
        if (!cfg.checkpoint_path.empty())
            save_checkpoint(cfg.checkpoint_path, res.params, provenance, cfg.seed);
    };

    for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
        if (cursor + batch > n_train) {  // next epoch, remainder dropped
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        std::vector<std::int64_t> batch_idx(order.begin() + cursor, order.begin() + cursor + batch);
        cursor += batch;

        PairBatch pb = make_batch(ds, batch_idx, emb);
        LossBreakdown breakdown;
        try {
            Graph g;
            ParamVars pv = bind_params(g, res.params);
            ForwardVars fv = forward_batch(g, pv, pb, t_pred);
            LossVars lv = total_loss(g, pv, fv, pb.labels, loss_cfg);
            breakdown = read_breakdown(g, lv);
            if (!breakdown.finite()) {
                dump_last_good();
                throw NumericError("train: non-finite loss at iteration " + std::to_string(it));
            }
            res.params.zero_grad();
            g.backward(lv.total);
        } catch (const DomainError& e) {
            dump_last_good();
            throw NumericError("train: numeric failure at iteration " + std::to_string(it) +
                               ": " + e.what());
        } catch (const NormalizationError& e) {
            dump_last_good();
            throw NumericError("train: numeric failure at iteration " + std::to_string(it) +
                               ": " + e.what());
        }

        if (cfg.grad_clip > 0) {
            double norm_sq = 0.0;
            for (auto& [name, t] : res.params.named())
                for (double gv : t->grad) norm_sq += gv * gv;
            const double norm = std::sqrt(norm_sq);
            if (norm > cfg.grad_clip) {
                const double f = cfg.grad_clip / norm;
                for (auto& [name, t] : res.params.named())
                    for (double& gv : t->grad) gv *= f;
            }
        }

        double lr_t = cfg.lr;
        if (cfg.lr_warmup > 0 && it <= cfg.lr_warmup)
            lr_t *= static_cast<double>(it) / static_cast<double>(cfg.lr_warmup);
        if (cfg.lr_decay < 1.0) lr_t *= std::pow(cfg.lr_decay, static_cast<double>(it - 1));

        sgd_step(res.params, lr_t, cfg.momentum, sgd);
        res.params.clamp_tau();

        if (it % cfg.eval_every == 0 || it == cfg.iterations) {
            TrainRecord rec;
            rec.iteration = it;
            rec.loss = breakdown;
            rec.tau = res.params.tau();
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                        t_start)
                              .count();
            res.log.records.push_back(rec);
        }
    }

    if (!cfg.checkpoint_path.empty())
        save_checkpoint(cfg.checkpoint_path, res.params, provenance, cfg.seed);
    return res;
}

}  // namespace protorel
