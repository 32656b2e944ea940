#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "protorel/errors.hpp"
#include "protorel/graph.hpp"
#include "protorel/model.hpp"
#include "protorel/tensor.hpp"

namespace protorel {

struct LossConfig {
    std::int64_t k1 = 10;  // negatives averaged in the instance triplet loss
    std::int64_t k2 = 1;   // nearest neighbours per prototype row
    double gamma1 = 1.0;
    double gamma2 = 7.0;
    bool enable_pl = true;  // prototype matching losses; off = linear-classifier baseline
    bool enable_pr = true;  // prototype separation losses
    std::optional<std::vector<double>> class_weights;  // per predicate id 0..N, Eq-sim only

    void validate(std::int64_t num_predicates) const {
        if (k1 < 1 || k1 > num_predicates)
            throw ConfigError("loss: k1 must satisfy 1 <= k1 <= " +
                              std::to_string(num_predicates) + ", got " + std::to_string(k1));
        if (k2 < 1 || k2 > num_predicates)
            throw ConfigError("loss: k2 must satisfy 1 <= k2 <= " +
                              std::to_string(num_predicates) + ", got " + std::to_string(k2));
        if (gamma1 < 0 || gamma2 < 0) throw ConfigError("loss: margins must be >= 0");
        if (class_weights &&
            static_cast<std::int64_t>(class_weights->size()) != num_predicates + 1)
            throw ConfigError("loss: class_weights must have " +
                              std::to_string(num_predicates + 1) + " entries");
    }
};

struct LossBreakdown {
    double e_sim = 0, e_euc = 0, r_sim = 0, r_euc = 0, total = 0;

    bool finite() const {
        return std::isfinite(e_sim) && std::isfinite(e_euc) && std::isfinite(r_sim) &&
               std::isfinite(r_euc) && std::isfinite(total);
    }
};

struct LossVars {
    Var e_sim, e_euc, r_sim, r_euc, total;
};

namespace lossdetail {

// Shift logits by their per-row max (held constant) before exponentiating.
// The shift cancels in the cross-entropy value and its gradient.
inline Var stable_cross_entropy(Graph& g, Var logits, const std::vector<std::int64_t>& labels,
                                const std::vector<double>* weights) {
    const Tensor& lt = g.val(logits);
    const std::int64_t rows = lt.shape[0], cols = lt.shape[1];
    if (static_cast<std::int64_t>(labels.size()) != rows)
        throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
    Tensor shift = Tensor::zeros(lt.shape);
    for (std::int64_t r = 0; r < rows; ++r) {
        double m = lt.at(r, 0);
        for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, lt.at(r, c));
        for (std::int64_t c = 0; c < cols; ++c) shift.at(r, c) = m;
    }
    Var z = g.sub(logits, g.constant(std::move(shift)));
    Var lse = g.log_(g.sum_axis(g.exp_(z), 1));       // [B]
    Var truth = g.gather_last(z, labels);             // [B]
    Var per = g.sub(lse, truth);
    if (!weights) return g.mean_all(per);
    Tensor w = Tensor::zeros({rows});
    double wsum = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double wi = (*weights)[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])];
        w.at(r) = wi;
        wsum += wi;
    }
    if (wsum <= 0) throw ConfigError("cross-entropy: class weights sum to zero on this batch");
    return g.scale(g.sum_all(g.mul(per, g.constant(std::move(w)))), 1.0 / wsum);
}

// Squared Euclidean distances between the rows of a and the rows of b,
// via |a|^2 + |b|^2 - 2 a.b with the outer sums realized as rank-one
// matmuls so gradients flow.
inline Var pairwise_sqdist(Graph& g, Var a, Var b) {
    const std::int64_t ra = g.val(a).shape[0];
    const std::int64_t rb = g.val(b).shape[0];
    Var aa = g.sum_axis(g.square(a), 1);  // [ra]
    Var bb = g.sum_axis(g.square(b), 1);  // [rb]
    Var cross = g.matmul(a, g.transpose(b));
    Var acol = g.matmul(g.reshape(aa, {ra, 1}), g.ones({1, rb}));
    Var brow = g.matmul(g.ones({ra, 1}), g.reshape(bb, {1, rb}));
    return g.sub(g.add(acol, brow), g.scale(cross, 2.0));
}

inline void check_labels(const std::vector<std::int64_t>& labels, std::int64_t n_classes) {
    for (auto l : labels)
        if (l < 0 || l >= n_classes)
            throw ValidationError("label " + std::to_string(l) + " outside 0.." +
                                  std::to_string(n_classes - 1));
}

}  // namespace lossdetail

// Cosine cross-entropy between relation representations and prototypes with
// learnable temperature. Optional per-class weights give a weighted mean.
inline Var loss_e_sim(Graph& g, Var rel, Var protos, const std::vector<std::int64_t>& labels,
                      Var tau, const std::optional<std::vector<double>>& class_weights = {}) {
    lossdetail::check_labels(labels, g.val(protos).shape[0]);
    if (!(g.scalar(tau) > 0)) throw NumericError("loss_e_sim: tau must be positive");
    Var logits = g.scalar_div(g.matmul(g.l2_normalize(rel), g.transpose(g.l2_normalize(protos))),
                              tau);
    return lossdetail::stable_cross_entropy(g, logits, labels,
                                            class_weights ? &*class_weights : nullptr);
}

// Instance-to-prototype triplet loss: squared distance to the true prototype
// against the mean of the k1 nearest other prototypes, hinged at gamma1.
inline Var loss_e_euc(Graph& g, Var rel, Var protos, const std::vector<std::int64_t>& labels,
                      std::int64_t k1, double gamma1) {
    const std::int64_t n_classes = g.val(protos).shape[0];
    if (k1 < 1 || k1 > n_classes - 1)
        throw ConfigError("loss_e_euc: k1 = " + std::to_string(k1) + " must be in 1.." +
                          std::to_string(n_classes - 1));
    lossdetail::check_labels(labels, n_classes);
    const std::int64_t rows = g.val(rel).shape[0];

    Var dist = lossdetail::pairwise_sqdist(g, rel, protos);  // [B, N+1]
    // push the true-class column past every real distance so the ascending
    // sort leaves the k1 smallest negatives in front
    Tensor mask = Tensor::zeros(g.val(dist).shape);
    for (std::int64_t r = 0; r < rows; ++r)
        mask.at(r, labels[static_cast<std::size_t>(r)]) = 1e30;
    Var sorted = g.sort_last(g.add(dist, g.constant(std::move(mask))));
    Var neg = g.scale(g.sum_axis(g.slice_last(sorted, 0, k1), 1), 1.0 / static_cast<double>(k1));
    Var pos = g.gather_last(dist, labels);
    Var per = g.hinge(g.add(g.sub(pos, neg), g.number(gamma1)));
    return g.mean_all(per);
}

// l2,1 norm of the prototype cosine-similarity matrix, diagonal included.
inline Var loss_r_sim(Graph& g, Var protos) {
    Var cbar = g.l2_normalize(protos);
    Var sim = g.matmul(cbar, g.transpose(cbar));
    return g.sum_all(g.sqrt_(g.sum_axis(g.square(sim), 1)));
}

// Prototype nearest-neighbour separation: mean of each row's k2 smallest
// squared distances (self excluded), hinged against gamma2.
inline Var loss_r_euc(Graph& g, Var protos, std::int64_t k2, double gamma2) {
    const std::int64_t n_classes = g.val(protos).shape[0];
    if (k2 < 1 || k2 > n_classes - 1)
        throw ConfigError("loss_r_euc: k2 = " + std::to_string(k2) + " must be in 1.." +
                          std::to_string(n_classes - 1));
    Var dist = lossdetail::pairwise_sqdist(g, protos, protos);
    Var sorted = g.sort_last(dist);
    // column 0 of each sorted row is the exact-zero self distance
    Var sel = g.slice_last(sorted, 1, k2);
    Var mean_nn = g.scale(g.sum_all(sel), 1.0 / static_cast<double>(n_classes * k2));
    return g.hinge(g.add(g.neg(mean_nn), g.number(gamma2)));
}

// Total training loss over one forward pass. PL off replaces the matching
// losses with plain cross-entropy on the linear classifier head (ablation
// baseline); PR off zeroes the prototype separation terms.
inline LossVars total_loss(Graph& g, const ParamVars& pv, const ForwardVars& fv,
                           const std::vector<std::int64_t>& labels, const LossConfig& cfg) {
    const std::int64_t n_classes = g.val(fv.protos).shape[0];
    cfg.validate(n_classes - 1);
    LossVars out;
    if (cfg.enable_pl) {
        out.e_sim = loss_e_sim(g, fv.rel, fv.protos, labels, fv.tau, cfg.class_weights);
        out.e_euc = loss_e_euc(g, fv.rel, fv.protos, labels, cfg.k1, cfg.gamma1);
    } else {
        out.e_sim = lossdetail::stable_cross_entropy(g, baseline_logits(g, pv, fv.rel), labels,
                                                     nullptr);
        out.e_euc = g.number(0.0);
    }
    if (cfg.enable_pr) {
        out.r_sim = loss_r_sim(g, fv.protos);
        out.r_euc = loss_r_euc(g, fv.protos, cfg.k2, cfg.gamma2);
    } else {
        out.r_sim = g.number(0.0);
        out.r_euc = g.number(0.0);
    }
    out.total = g.add(g.add(out.e_sim, out.e_euc), g.add(out.r_sim, out.r_euc));
    return out;
}

inline LossBreakdown read_breakdown(const Graph& g, const LossVars& v) {
    LossBreakdown b;
    b.e_sim = g.scalar(v.e_sim);
    b.e_euc = g.scalar(v.e_euc);
    b.r_sim = g.scalar(v.r_sim);
    b.r_euc = g.scalar(v.r_euc);
    b.total = g.scalar(v.total);
    return b;
}

// Class-balanced weights w_c proportional to (1-beta)/(1-beta^{n_c}),
// normalized to mean 1 over classes with samples; classes absent from the
// counts get weight 0.
inline std::vector<double> class_balanced_weights(const std::vector<std::int64_t>& counts,
                                                  double beta = 0.9999) {
    if (!(beta > 0 && beta < 1)) throw ConfigError("class weights: beta must be in (0,1)");
    std::vector<double> w(counts.size(), 0.0);
    double sum = 0.0;
    std::int64_t present = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] <= 0) continue;
        w[c] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(counts[c])));
        sum += w[c];
        ++present;
    }
    if (present == 0) throw ConfigError("class weights: no class has samples");
    const double mean = sum / static_cast<double>(present);
    for (auto& x : w) x /= mean;
    return w;
}

}  // namespace protorel
