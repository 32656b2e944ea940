#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "protorel/dataset.hpp"
#include "protorel/embeddings.hpp"
#include "protorel/errors.hpp"
#include "protorel/graph.hpp"
#include "protorel/rng.hpp"
#include "protorel/tensor.hpp"

namespace protorel {

struct ModelConfig {
    std::int64_t embedding_dim = 0;
    std::int64_t visual_dim = 0;
    std::int64_t union_dim = 0;
    std::int64_t semantic_dim = 128;  // width of the common embedding space
    std::int64_t hidden_dim = 0;      // visual-to-semantic hidden width; 0 = semantic_dim
    std::int64_t num_predicates = 0;  // N, background excluded
    double tau_init = 0.1;
    double tau_min = 0.01;
    double tau_max = 5.0;

    std::int64_t hidden() const { return hidden_dim > 0 ? hidden_dim : semantic_dim; }

    void validate() const {
        if (embedding_dim < 1 || visual_dim < 1 || union_dim < 1 || semantic_dim < 1)
            throw ConfigError("model: dimensions must be >= 1");
        if (num_predicates < 0) throw ConfigError("model: num_predicates must be >= 0");
        if (!(tau_min > 0) || !(tau_max > tau_min))
            throw ConfigError("model: need 0 < tau_min < tau_max");
        if (!(tau_init >= tau_min && tau_init <= tau_max))
            throw ConfigError("model: tau_init outside clamp range");
    }

    bool operator==(const ModelConfig&) const = default;
};

// All learnable state.
//
// Semantic projections map class word embeddings to prototypes; per-branch
// gate layers filter visual content against the prototype context; the
// visual-to-semantic map is a one-hidden-layer ReLU network without biases,
// so a zero visual feature maps to exactly zero and every representation
// collapses onto its class prototype. The map is shared across the subject,
// object and union branches; a separate union map exists only when the union
// feature width differs from the entity width.
//
// The linear classifier head (cls_*) is used by the no-prototype baseline
// configuration only; it is always allocated so checkpoints have a fixed
// tensor set.
struct ModelParams {
    ModelConfig cfg;

    Tensor proj_subj, proj_obj, proj_pred;  // [d, e]
    Tensor gate_subj_w, gate_subj_b;        // [d, 2d], [d]
    Tensor gate_obj_w, gate_obj_b;
    Tensor gate_pred_w, gate_pred_b;
    Tensor vis_hidden_w, vis_out_w;  // [h, v], [d, h]
    Tensor uni_hidden_w, uni_out_w;  // empty when union width == visual width
    Tensor log_tau;                  // tau = exp(log_tau)
    Tensor cls_w, cls_b;             // [N+1, d], [N+1]

    bool has_union_map() const { return cfg.union_dim != cfg.visual_dim; }

    double tau() const { return std::exp(log_tau.data[0]); }

    void clamp_tau() {
        const double lo = std::log(cfg.tau_min), hi = std::log(cfg.tau_max);
        double& v = log_tau.data[0];
        if (v < lo) v = lo;
        if (v > hi) v = hi;
    }

    void init(std::uint64_t seed) {
        cfg.validate();
        const std::int64_t d = cfg.semantic_dim, e = cfg.embedding_dim, h = cfg.hidden();
        Rng rng(derive_seed(seed, 0xC0FFEE));
        auto mat = [&](std::int64_t rows, std::int64_t cols) {
            Tensor t = Tensor::zeros({rows, cols});
            const double bound = std::sqrt(6.0 / static_cast<double>(cols));
            for (auto& x : t.data) x = rng.uniform(-bound, bound);
            return t;
        };
        proj_subj = mat(d, e);
        proj_obj = mat(d, e);
        proj_pred = mat(d, e);
        gate_subj_w = mat(d, 2 * d);
        gate_subj_b = Tensor::zeros({d});
        gate_obj_w = mat(d, 2 * d);
        gate_obj_b = Tensor::zeros({d});
        gate_pred_w = mat(d, 2 * d);
        gate_pred_b = Tensor::zeros({d});
        vis_hidden_w = mat(h, cfg.visual_dim);
        vis_out_w = mat(d, h);
        if (has_union_map()) {
            uni_hidden_w = mat(h, cfg.union_dim);
            uni_out_w = mat(d, h);
        } else {
            uni_hidden_w = Tensor();
            uni_out_w = Tensor();
        }
        log_tau = Tensor::scalar(std::log(cfg.tau_init));
        cls_w = mat(cfg.num_predicates + 1, d);
        cls_b = Tensor::zeros({cfg.num_predicates + 1});
        set_requires_grad(true);
    }

    std::vector<std::pair<std::string, Tensor*>> named() {
        std::vector<std::pair<std::string, Tensor*>> out = {
            {"proj_subj", &proj_subj},   {"proj_obj", &proj_obj},
            {"proj_pred", &proj_pred},   {"gate_subj_w", &gate_subj_w},
            {"gate_subj_b", &gate_subj_b}, {"gate_obj_w", &gate_obj_w},
            {"gate_obj_b", &gate_obj_b}, {"gate_pred_w", &gate_pred_w},
            {"gate_pred_b", &gate_pred_b}, {"vis_hidden_w", &vis_hidden_w},
            {"vis_out_w", &vis_out_w},   {"log_tau", &log_tau},
            {"cls_w", &cls_w},           {"cls_b", &cls_b},
        };
        if (has_union_map()) {
            out.push_back({"uni_hidden_w", &uni_hidden_w});
            out.push_back({"uni_out_w", &uni_out_w});
        }
        return out;
    }

    void set_requires_grad(bool f) {
        for (auto& [name, t] : named()) t->set_requires_grad(f);
    }
    void zero_grad() {
        for (auto& [name, t] : named()) t->zero_grad();
    }
};

// One mini-batch of paired inputs, ready for the graph.
struct PairBatch {
    Tensor t_subj, t_obj;           // [B, e] word embeddings
    Tensor x_subj, x_obj, x_union;  // [B, v], [B, v], [B, u]
    std::vector<std::int64_t> labels;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

// Stack the word embeddings of all N+1 predicate classes, row i = class i.
inline Tensor stack_predicate_embeddings(const Dataset& ds, const WordEmbeddingTable& emb) {
    const auto n = static_cast<std::int64_t>(ds.predicate_classes.size());
    Tensor t = Tensor::zeros({n, emb.dim()});
    for (std::int64_t i = 0; i < n; ++i) {
        const auto v = emb.lookup(ds.predicate_classes[static_cast<std::size_t>(i)]);
        std::copy(v.begin(), v.end(), t.data.begin() + i * emb.dim());
    }
    return t;
}

inline PairBatch make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices,
                            const WordEmbeddingTable& emb) {
    const auto b = static_cast<std::int64_t>(indices.size());
    PairBatch batch;
    batch.t_subj = Tensor::zeros({b, emb.dim()});
    batch.t_obj = Tensor::zeros({b, emb.dim()});
    batch.x_subj = Tensor::zeros({b, ds.visual_dim});
    batch.x_obj = Tensor::zeros({b, ds.visual_dim});
    batch.x_union = Tensor::zeros({b, ds.union_dim});
    batch.labels.resize(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& s = ds.samples[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
        const auto ts = emb.lookup(ds.entity_classes[static_cast<std::size_t>(s.subject_class)]);
        const auto to = emb.lookup(ds.entity_classes[static_cast<std::size_t>(s.object_class)]);
        std::copy(ts.begin(), ts.end(), batch.t_subj.data.begin() + i * emb.dim());
        std::copy(to.begin(), to.end(), batch.t_obj.data.begin() + i * emb.dim());
        std::copy(s.x_subject.begin(), s.x_subject.end(),
                  batch.x_subj.data.begin() + i * ds.visual_dim);
        std::copy(s.x_object.begin(), s.x_object.end(),
                  batch.x_obj.data.begin() + i * ds.visual_dim);
        std::copy(s.x_union.begin(), s.x_union.end(),
                  batch.x_union.data.begin() + i * ds.union_dim);
        batch.labels[static_cast<std::size_t>(i)] = s.predicate_class;
    }
    return batch;
}

// Parameter leaves bound to one graph. Bind once per graph so each parameter
// has exactly one node.
struct ParamVars {
    Var proj_subj, proj_obj, proj_pred;
    Var gate_subj_w, gate_subj_b, gate_obj_w, gate_obj_b, gate_pred_w, gate_pred_b;
    Var vis_hidden_w, vis_out_w;
    Var uni_hidden_w, uni_out_w;  // valid only when the model has a union map
    Var log_tau;
    Var cls_w, cls_b;
    bool union_map = false;
};

inline ParamVars bind_params(Graph& g, ModelParams& p) {
    ParamVars v;
    v.proj_subj = g.leaf(p.proj_subj);
    v.proj_obj = g.leaf(p.proj_obj);
    v.proj_pred = g.leaf(p.proj_pred);
    v.gate_subj_w = g.leaf(p.gate_subj_w);
    v.gate_subj_b = g.leaf(p.gate_subj_b);
    v.gate_obj_w = g.leaf(p.gate_obj_w);
    v.gate_obj_b = g.leaf(p.gate_obj_b);
    v.gate_pred_w = g.leaf(p.gate_pred_w);
    v.gate_pred_b = g.leaf(p.gate_pred_b);
    v.vis_hidden_w = g.leaf(p.vis_hidden_w);
    v.vis_out_w = g.leaf(p.vis_out_w);
    v.union_map = p.has_union_map();
    if (v.union_map) {
        v.uni_hidden_w = g.leaf(p.uni_hidden_w);
        v.uni_out_w = g.leaf(p.uni_out_w);
    }
    v.log_tau = g.leaf(p.log_tau);
    v.cls_w = g.leaf(p.cls_w);
    v.cls_b = g.leaf(p.cls_b);
    return v;
}

namespace modelops {

// X [B,k] -> X W^T + b, with the bias row broadcast via a ones column.
inline Var linear(Graph& g, Var x, Var w, Var b) {
    Var y = g.matmul(x, g.transpose(w));
    const std::int64_t rows = g.val(y).shape[0];
    const std::int64_t cols = g.val(y).shape[1];
    Var brow = g.reshape(b, {1, cols});
    return g.add(y, g.matmul(g.ones({rows, 1}), brow));
}

inline Var project(Graph& g, Var x, Var w) { return g.matmul(x, g.transpose(w)); }

}  // namespace modelops

// h(x): bias-free one-hidden-layer ReLU network into the semantic space.
inline Var visual_to_semantic(Graph& g, const ParamVars& p, Var x, bool union_branch) {
    const Var w1 = union_branch && p.union_map ? p.uni_hidden_w : p.vis_hidden_w;
    const Var w2 = union_branch && p.union_map ? p.uni_out_w : p.vis_out_w;
    return g.matmul(g.relu(g.matmul(x, g.transpose(w1))), g.transpose(w2));
}

enum class Branch { subject, object };

// Entity representation: prototype term plus gated visual content.
inline Var entity_embed(Graph& g, const ParamVars& p, Var t, Var x, Branch branch) {
    const Var proj = branch == Branch::subject ? p.proj_subj : p.proj_obj;
    const Var gw = branch == Branch::subject ? p.gate_subj_w : p.gate_obj_w;
    const Var gb = branch == Branch::subject ? p.gate_subj_b : p.gate_obj_b;
    Var proto = modelops::project(g, t, proj);
    Var hx = visual_to_semantic(g, p, x, false);
    Var gate = g.sigmoid(modelops::linear(g, g.concat_last(proto, hx), gw, gb));
    return g.add(proto, g.mul(gate, hx));
}

// Pair fusion: ReLU(s + o) - (s - o)^2, elementwise.
inline Var fuse(Graph& g, Var s, Var o) {
    return g.sub(g.relu(g.add(s, o)), g.square(g.sub(s, o)));
}

namespace detail_model {
inline Var predicate_content_fused(Graph& g, const ParamVars& p, Var fused, Var x_union) {
    Var hx = visual_to_semantic(g, p, x_union, true);
    Var gate = g.sigmoid(modelops::linear(g, g.concat_last(fused, hx), p.gate_pred_w,
                                          p.gate_pred_b));
    return g.mul(gate, hx);
}
}  // namespace detail_model

// Instance-varied predicate content: gated union feature against the fused
// pair context. The predicate word embedding does not enter here; it reaches
// the loss only through the prototype bank.
inline Var predicate_content(Graph& g, const ParamVars& p, Var s, Var o, Var x_union) {
    return detail_model::predicate_content_fused(g, p, fuse(g, s, o), x_union);
}

// Relation representation r = fuse(s, o) - predicate_content, to be matched
// against the predicate prototypes.
inline Var relation_rep(Graph& g, const ParamVars& p, Var s, Var o, Var x_union) {
    Var fused = fuse(g, s, o);
    return g.sub(fused, detail_model::predicate_content_fused(g, p, fused, x_union));
}

// Prototype bank row i = proj_pred * t_pred(i), all N+1 predicate classes.
inline Var prototype_bank(Graph& g, const ParamVars& p, Var t_pred_all) {
    return modelops::project(g, t_pred_all, p.proj_pred);
}

// Linear classifier over the relation representation (baseline head).
inline Var baseline_logits(Graph& g, const ParamVars& p, Var rel) {
    return modelops::linear(g, rel, p.cls_w, p.cls_b);
}

struct ForwardVars {
    Var subj, obj, rel;  // [B, d]
    Var protos;          // [N+1, d]
    Var tau;             // scalar
};

inline ForwardVars forward_batch(Graph& g, const ParamVars& p, const PairBatch& batch,
                                 const Tensor& t_pred_all) {
    ForwardVars out;
    Var ts = g.input(batch.t_subj);
    Var to = g.input(batch.t_obj);
    Var xs = g.input(batch.x_subj);
    Var xo = g.input(batch.x_obj);
    Var xu = g.input(batch.x_union);
    out.subj = entity_embed(g, p, ts, xs, Branch::subject);
    out.obj = entity_embed(g, p, to, xo, Branch::object);
    out.rel = relation_rep(g, p, out.subj, out.obj, xu);
    out.protos = prototype_bank(g, p, g.input(t_pred_all));
    out.tau = g.exp_(p.log_tau);
    return out;
}

// Plain-value forward for evaluation: runs the same graph code, extracts the
// outputs, and drops the tape.
struct BatchOutputs {
    Tensor subj, obj, rel;  // [B, d]
    Tensor protos;          // [N+1, d]
    double tau = 0.0;
};

inline BatchOutputs run_forward(ModelParams& params, const PairBatch& batch,
                                const Tensor& t_pred_all) {
    Graph g;
    ParamVars pv = bind_params(g, params);
    ForwardVars fv = forward_batch(g, pv, batch, t_pred_all);
    BatchOutputs out;
    out.subj = g.val(fv.subj);
    out.obj = g.val(fv.obj);
    out.rel = g.val(fv.rel);
    out.protos = g.val(fv.protos);
    out.tau = g.scalar(fv.tau);
    return out;
}

}  // namespace protorel
