#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "protorel/errors.hpp"
#include "protorel/graph.hpp"
#include "protorel/tensor.hpp"

namespace protorel {

// Scalar-valued function of several tensors, expressed on a fresh graph.
using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max(1e-12, std::abs(analytic) + std::abs(numeric));
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t worst_input = -1;
    std::int64_t worst_coord = -1;
};

// Compare reverse-mode gradients of f against central finite differences at
// the given points. Every coordinate of every point is perturbed; the report
// carries the max relative error |analytic-numeric| / max(1e-12, |a|+|n|).
inline GradCheckReport grad_check_multi(const GraphFn& f, const std::vector<Tensor>& points,
                                        double eps, std::optional<std::pair<Op, double>> fault = {}) {
    if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");

    std::vector<Tensor> leaves = points;
    {
        Graph g;
        if (fault) g.inject_vjp_fault(fault->first, fault->second);
        std::vector<Var> vars;
        vars.reserve(leaves.size());
        for (auto& t : leaves) {
            t.set_requires_grad(true);
            t.zero_grad();
            vars.push_back(g.leaf(t));
        }
        Var loss = f(g, vars);
        if (!std::isfinite(g.scalar(loss)))
            throw NumericError("grad_check: non-finite loss at base point");
        g.backward(loss);
    }

    auto eval = [&](const std::vector<Tensor>& at) {
        Graph g;
        std::vector<Var> vars;
        vars.reserve(at.size());
        for (const auto& t : at) vars.push_back(g.input(t));
        const double v = g.scalar(f(g, vars));
        if (!std::isfinite(v))
            throw NumericError("grad_check: non-finite loss during finite differencing");
        return v;
    };

    GradCheckReport rep;
    std::vector<Tensor> work = points;
    for (std::size_t ti = 0; ti < work.size(); ++ti) {
        for (std::size_t i = 0; i < work[ti].data.size(); ++i) {
            const double orig = work[ti].data[i];
            work[ti].data[i] = orig + eps;
            const double up = eval(work);
            work[ti].data[i] = orig - eps;
            const double dn = eval(work);
            work[ti].data[i] = orig;
            const double numeric = (up - dn) / (2.0 * eps);
            const double err = relative_error(leaves[ti].grad[i], numeric);
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_input = static_cast<std::int64_t>(ti);
                rep.worst_coord = static_cast<std::int64_t>(i);
            }
        }
    }
    return rep;
}

// Single-point form: f maps one tensor to a scalar.
inline double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point,
                         double eps) {
    return grad_check_multi(
               [&](Graph& g, const std::vector<Var>& v) { return f(g, v[0]); }, {point}, eps)
        .max_rel_err;
}

}  // namespace protorel
