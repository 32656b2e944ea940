#pragma once

// Independent straight-line evaluators for the model equations and losses.
// Everything here is plain double-loop code that never touches the graph
// machinery; the selfcheck suite and the tests compare the graph
// implementations against these.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "protorel/model.hpp"
#include "protorel/tensor.hpp"

namespace protorel::reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec matvec(const Tensor& w, const Vec& x) {
    const std::int64_t rows = w.shape[0], cols = w.shape[1];
    Vec out(static_cast<std::size_t>(rows), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < cols; ++c)
            acc += w.at(r, c) * x[static_cast<std::size_t>(c)];
        out[static_cast<std::size_t>(r)] = acc;
    }
    return out;
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Vec visual_to_semantic(const ModelParams& p, const Vec& x, bool union_branch) {
    const Tensor& w1 = union_branch && p.has_union_map() ? p.uni_hidden_w : p.vis_hidden_w;
    const Tensor& w2 = union_branch && p.has_union_map() ? p.uni_out_w : p.vis_out_w;
    Vec h = matvec(w1, x);
    for (auto& v : h) v = std::max(0.0, v);
    return matvec(w2, h);
}

inline Vec gate(const Tensor& w, const Tensor& b, const Vec& left, const Vec& right) {
    Vec cat = left;
    cat.insert(cat.end(), right.begin(), right.end());
    Vec z = matvec(w, cat);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = sigmoid(z[i] + b.at(static_cast<std::int64_t>(i)));
    return z;
}

inline Vec entity_embed(const ModelParams& p, const Vec& t, const Vec& x, Branch branch) {
    const Tensor& proj = branch == Branch::subject ? p.proj_subj : p.proj_obj;
    const Tensor& gw = branch == Branch::subject ? p.gate_subj_w : p.gate_obj_w;
    const Tensor& gb = branch == Branch::subject ? p.gate_subj_b : p.gate_obj_b;
    Vec proto = matvec(proj, t);
    Vec hx = visual_to_semantic(p, x, false);
    Vec gt = gate(gw, gb, proto, hx);
    Vec out(proto.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = proto[i] + gt[i] * hx[i];
    return out;
}

inline Vec fuse(const Vec& s, const Vec& o) {
    Vec out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double sum = s[i] + o[i], diff = s[i] - o[i];
        out[i] = std::max(0.0, sum) - diff * diff;
    }
    return out;
}

inline Vec predicate_content(const ModelParams& p, const Vec& s, const Vec& o, const Vec& xu) {
    Vec fused = fuse(s, o);
    Vec hx = visual_to_semantic(p, xu, true);
    Vec gt = gate(p.gate_pred_w, p.gate_pred_b, fused, hx);
    Vec out(hx.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gt[i] * hx[i];
    return out;
}

inline Vec relation_rep(const ModelParams& p, const Vec& s, const Vec& o, const Vec& xu) {
    Vec fused = fuse(s, o);
    Vec up = predicate_content(p, s, o, xu);
    Vec out(fused.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fused[i] - up[i];
    return out;
}

inline Mat prototypes(const ModelParams& p, const Mat& t_pred) {
    Mat out;
    out.reserve(t_pred.size());
    for (const auto& t : t_pred) out.push_back(matvec(p.proj_pred, t));
    return out;
}

inline double norm(const Vec& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    return std::sqrt(ss);
}

inline double cosine(const Vec& a, const Vec& b) {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot / (norm(a) * norm(b));
}

inline double sqdist(const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline double loss_e_sim(const Mat& rel, const Mat& protos,
                         const std::vector<std::int64_t>& labels, double tau,
                         const std::optional<Vec>& class_weights = {}) {
    double acc = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
        double denom = 0.0, truth = 0.0;
        for (std::size_t j = 0; j < protos.size(); ++j) {
            const double q = std::exp(cosine(rel[i], protos[j]) / tau);
            denom += q;
            if (static_cast<std::int64_t>(j) == labels[i]) truth = q;
        }
        const double li = -std::log(truth / denom);
        const double wi = class_weights ? (*class_weights)[static_cast<std::size_t>(labels[i])] : 1.0;
        acc += wi * li;
        wsum += wi;
    }
    return acc / wsum;
}

inline double loss_e_euc(const Mat& rel, const Mat& protos,
                         const std::vector<std::int64_t>& labels, std::int64_t k1,
                         double gamma1) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rel.size(); ++i) {
        Vec others;
        double pos = 0.0;
        for (std::size_t j = 0; j < protos.size(); ++j) {
            const double d = sqdist(rel[i], protos[j]);
            if (static_cast<std::int64_t>(j) == labels[i])
                pos = d;
            else
                others.push_back(d);
        }
        std::sort(others.begin(), others.end());
        double neg = 0.0;
        for (std::int64_t j = 0; j < k1; ++j) neg += others[static_cast<std::size_t>(j)];
        neg /= static_cast<double>(k1);
        acc += std::max(0.0, pos - neg + gamma1);
    }
    return acc / static_cast<double>(rel.size());
}

inline double loss_r_sim(const Mat& protos) {
    const std::size_t n = protos.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double s = cosine(protos[i], protos[j]);
            row += s * s;
        }
        total += std::sqrt(row);
    }
    return total;
}

inline double loss_r_euc(const Mat& protos, std::int64_t k2, double gamma2) {
    const std::size_t n = protos.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Vec row;
        for (std::size_t j = 0; j < n; ++j) row.push_back(sqdist(protos[i], protos[j]));
        std::sort(row.begin(), row.end());
        for (std::int64_t j = 1; j <= k2; ++j) acc += row[static_cast<std::size_t>(j)];
    }
    const double mean_nn = acc / (static_cast<double>(n) * static_cast<double>(k2));
    return std::max(0.0, -mean_nn + gamma2);
}

struct RefPrediction {
    std::int64_t cls = 0;
    Vec scores;
    double confidence = 0.0;
};

// Exhaustive nearest-prototype classification by cosine similarity over tau;
// ties go to the lowest index.
inline RefPrediction predict(const Vec& rel, const Mat& protos, double tau) {
    RefPrediction out;
    out.scores.resize(protos.size());
    for (std::size_t j = 0; j < protos.size(); ++j)
        out.scores[j] = cosine(rel, protos[j]) / tau;
    out.cls = 0;
    for (std::size_t j = 1; j < protos.size(); ++j)
        if (out.scores[j] > out.scores[static_cast<std::size_t>(out.cls)])
            out.cls = static_cast<std::int64_t>(j);
    double denom = 0.0;
    for (double q : out.scores) denom += std::exp(q);
    out.confidence = std::exp(out.scores[static_cast<std::size_t>(out.cls)]) / denom;
    return out;
}

}  // namespace protorel::reference
