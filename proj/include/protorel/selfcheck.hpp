#pragma once

// Verification kit: gradient checks for every op and for the composed model
// equations, plus value checks of each loss against the straight-line
// reference implementations. The CLI selfcheck command and the acceptance
// suite both run this.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "protorel/gradcheck.hpp"
#include "protorel/losses.hpp"
#include "protorel/model.hpp"
#include "protorel/reference.hpp"
#include "protorel/rng.hpp"
#include "protorel/synthetic.hpp"

namespace protorel {

struct CheckResult {
    std::string name;
    double max_err = 0.0;
    double limit = 0.0;
    bool pass = false;
};

struct SelfcheckReport {
    std::vector<CheckResult> checks;
    bool pass = true;
    double seconds = 0.0;

    void add(std::string name, double err, double limit) {
        const bool ok = err < limit;
        checks.push_back({std::move(name), err, limit, ok});
        pass = pass && ok;
    }
};

struct SelfcheckOptions {
    int trials_per_op = 20;
    // central-difference step; ~2e-5 balances truncation against the
    // cancellation noise floor of double precision at loss magnitudes O(10)
    double eps = 2e-5;
    double grad_tol = 1e-5;
    double oracle_tol = 1e-10;
    int oracle_instances = 100;
    std::uint64_t seed = 20240901;
    // verification hook: scale the VJP of one op to simulate a backward bug
    std::optional<std::pair<Op, double>> fault;
};

namespace selfcheckdetail {

inline Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

inline Tensor rand_off_kink(Rng& rng, Shape shape, double margin) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.data) {
        const double v = rng.uniform(margin, 1.5);
        x = rng.uniform01() < 0.5 ? -v : v;
    }
    return t;
}

inline Tensor rand_sorted_gaps(Rng& rng, std::int64_t rows, std::int64_t cols) {
    // values with pairwise gaps > 1e-3 so eps-perturbation keeps the order
    Tensor t = Tensor::zeros({rows, cols});
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<double> vals;
        for (std::int64_t j = 0; j < cols; ++j)
            vals.push_back(-2.0 + 4.0 * static_cast<double>(j) / static_cast<double>(cols));
        rng.shuffle(vals);
        for (std::int64_t j = 0; j < cols; ++j)
            t.at(r, j) = vals[static_cast<std::size_t>(j)] + rng.uniform(-1e-3, 1e-3) * 0.5;
    }
    return t;
}

inline reference::Mat as_mat(const Tensor& t) {
    reference::Mat m;
    for (std::int64_t r = 0; r < t.shape[0]; ++r)
        m.emplace_back(t.data.begin() + r * t.shape[1], t.data.begin() + (r + 1) * t.shape[1]);
    return m;
}

// Bind a flat list of leaf vars (in named() order) back into ParamVars.
inline ParamVars param_vars_from(Graph&, const std::vector<Var>& vars,
                                 const std::vector<std::string>& names, bool union_map) {
    ParamVars pv;
    pv.union_map = union_map;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& n = names[i];
        Var v = vars[i];
        if (n == "proj_subj") pv.proj_subj = v;
        else if (n == "proj_obj") pv.proj_obj = v;
        else if (n == "proj_pred") pv.proj_pred = v;
        else if (n == "gate_subj_w") pv.gate_subj_w = v;
        else if (n == "gate_subj_b") pv.gate_subj_b = v;
        else if (n == "gate_obj_w") pv.gate_obj_w = v;
        else if (n == "gate_obj_b") pv.gate_obj_b = v;
        else if (n == "gate_pred_w") pv.gate_pred_w = v;
        else if (n == "gate_pred_b") pv.gate_pred_b = v;
        else if (n == "vis_hidden_w") pv.vis_hidden_w = v;
        else if (n == "vis_out_w") pv.vis_out_w = v;
        else if (n == "uni_hidden_w") pv.uni_hidden_w = v;
        else if (n == "uni_out_w") pv.uni_out_w = v;
        else if (n == "log_tau") pv.log_tau = v;
        else if (n == "cls_w") pv.cls_w = v;
        else if (n == "cls_b") pv.cls_b = v;
    }
    return pv;
}

}  // namespace selfcheckdetail

inline SelfcheckReport run_selfcheck(const SelfcheckOptions& opt = {}) {
    using namespace selfcheckdetail;
    const auto t0 = std::chrono::steady_clock::now();
    SelfcheckReport report;
    Rng rng(opt.seed);

    auto grad_case = [&](const std::string& name, const GraphFn& fn, auto make_points) {
        double worst = 0.0;
        for (int t = 0; t < opt.trials_per_op; ++t) {
            auto rep = grad_check_multi(fn, make_points(), opt.eps, opt.fault);
            worst = std::max(worst, rep.max_rel_err);
        }
        report.add("grad " + name, worst, opt.grad_tol);
    };

    // --- primitive ops ---------------------------------------------------
    grad_case("matmul",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.matmul(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {3, 4}, -1, 1),
                                             rand_tensor(rng, {4, 2}, -1, 1)};
              });
    grad_case("transpose",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.transpose(v[0])));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {3, 2}, -1, 1)}; });
    grad_case("reshape",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.reshape(v[0], {6})));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1)}; });
    grad_case("add",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.add(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1),
                                             rand_tensor(rng, {2, 3}, -1, 1)};
              });
    grad_case("sub",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.sub(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1),
                                             rand_tensor(rng, {2, 3}, -1, 1)};
              });
    grad_case("mul",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.mul(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1),
                                             rand_tensor(rng, {2, 3}, -1, 1)};
              });
    grad_case("scalar broadcast add/mul",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.mul(v[1], g.add(v[0], g.number(0.25)))));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {2, 2}, -1, 1),
                                             rand_tensor(rng, {}, 0.5, 1.5)};
              });
    grad_case("scale",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.scale(v[0], -1.7)));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {4}, -1, 1)}; });
    grad_case("scalar-divide",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.scalar_div(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {4}, -1, 1),
                                             rand_tensor(rng, {}, 0.5, 2.0)};
              });
    grad_case("square",
              [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.square(v[0])); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {5}, -2, 2)}; });
    grad_case("sqrt",
              [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.sqrt_(v[0])); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {5}, 0.2, 2.0)}; });
    grad_case("relu/hinge",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.relu(v[0])));
              },
              [&] { return std::vector<Tensor>{rand_off_kink(rng, {6}, 2e-3)}; });
    grad_case("sigmoid",
              [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.sigmoid(v[0])); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {5}, -2, 2)}; });
    grad_case("log",
              [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.log_(v[0])); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {5}, 0.2, 2.0)}; });
    grad_case("exp",
              [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.exp_(v[0])); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {5}, -1.5, 1.5)}; });
    grad_case("concat-last",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.concat_last(v[0], v[1])));
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {2, 2}, -1, 1),
                                             rand_tensor(rng, {2, 3}, -1, 1)};
              });
    grad_case("sum/mean axis",
              [](Graph& g, const std::vector<Var>& v) {
                  Var a = g.reshape(g.sum_axis(v[0], 0), {1, 3});
                  Var b = g.reshape(g.mean_axis(v[0], 1), {1, 2});
                  return g.add(g.sum_all(g.square(a)), g.sum_all(g.square(b)));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {2, 3}, -1, 1)}; });
    grad_case("l2-normalize",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.add(g.l2_normalize(v[0]), g.number(0.4))));
              },
              [&] { return std::vector<Tensor>{rand_off_kink(rng, {3, 4}, 0.2)}; });
    grad_case("sort-last",
              [](Graph& g, const std::vector<Var>& v) {
                  Var s = g.sort_last(v[0]);
                  return g.sum_all(g.mul(s, g.constant(Tensor::matrix(
                                                {{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}}))));
              },
              [&] { return std::vector<Tensor>{rand_sorted_gaps(rng, 2, 5)}; });
    grad_case("slice-last",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.slice_last(v[0], 1, 3)));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {2, 5}, -1, 1)}; });
    grad_case("gather-last",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(g.gather_last(v[0], {2, 0, 1})));
              },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {3, 4}, -1, 1)}; });

    // --- composed model equations ----------------------------------------
    grad_case("fuse",
              [](Graph& g, const std::vector<Var>& v) {
                  return g.sum_all(g.square(fuse(g, v[0], v[1])));
              },
              [&] {
                  // keep s+o off the relu kink
                  Tensor s = rand_tensor(rng, {2, 4}, -1, 1);
                  Tensor o = rand_tensor(rng, {2, 4}, -1, 1);
                  for (std::size_t i = 0; i < s.data.size(); ++i)
                      if (std::abs(s.data[i] + o.data[i]) < 5e-3) s.data[i] += 1e-2;
                  return std::vector<Tensor>{s, o};
              });

    ModelConfig mini;
    mini.embedding_dim = 6;
    mini.visual_dim = 5;
    mini.union_dim = 5;
    mini.semantic_dim = 4;
    mini.num_predicates = 4;
    auto model_case = [&](const std::string& name, auto body) {
        double worst = 0.0;
        for (int t = 0; t < opt.trials_per_op; ++t) {
            ModelParams params;
            params.cfg = mini;
            params.init(rng.raw());
            auto names_tensors = params.named();
            std::vector<std::string> names;
            std::vector<Tensor> points;
            for (auto& [n, ten] : names_tensors) {
                names.push_back(n);
                points.push_back(*ten);
            }
            Tensor t_emb = rand_tensor(rng, {3, mini.embedding_dim}, -1, 1);
            Tensor x_vis = rand_tensor(rng, {3, mini.visual_dim}, -1, 1);
            Tensor x_uni = rand_tensor(rng, {3, mini.union_dim}, -1, 1);
            GraphFn fn = [&](Graph& g, const std::vector<Var>& v) {
                ParamVars pv = param_vars_from(g, v, names, false);
                return body(g, pv, g.input(t_emb), g.input(x_vis), g.input(x_uni));
            };
            auto rep = grad_check_multi(fn, points, opt.eps, opt.fault);
            worst = std::max(worst, rep.max_rel_err);
        }
        report.add("grad " + name, worst, opt.grad_tol);
    };
    model_case("entity-embed", [](Graph& g, ParamVars& pv, Var t, Var x, Var) {
        return g.sum_all(g.square(entity_embed(g, pv, t, x, Branch::subject)));
    });
    model_case("predicate-content", [](Graph& g, ParamVars& pv, Var t, Var x, Var xu) {
        Var s = entity_embed(g, pv, t, x, Branch::subject);
        Var o = entity_embed(g, pv, t, x, Branch::object);
        return g.sum_all(g.square(predicate_content(g, pv, s, o, xu)));
    });
    model_case("relation-rep", [](Graph& g, ParamVars& pv, Var t, Var x, Var xu) {
        Var s = entity_embed(g, pv, t, x, Branch::subject);
        Var o = entity_embed(g, pv, t, x, Branch::object);
        return g.sum_all(g.square(relation_rep(g, pv, s, o, xu)));
    });

    // --- individual losses -------------------------------------------------
    grad_case("loss e_sim",
              [](Graph& g, const std::vector<Var>& v) {
                  return loss_e_sim(g, v[0], v[1], {1, 3, 0, 2}, g.exp_(v[2]));
              },
              [&] {
                  return std::vector<Tensor>{rand_off_kink(rng, {4, 5}, 0.1),
                                             rand_off_kink(rng, {6, 5}, 0.1),
                                             rand_tensor(rng, {}, -1.0, 0.5)};
              });
    grad_case("loss e_euc",
              [](Graph& g, const std::vector<Var>& v) {
                  return loss_e_euc(g, v[0], v[1], {1, 3, 0, 2}, 2, 1.0);
              },
              [&] {
                  return std::vector<Tensor>{rand_tensor(rng, {4, 5}, -1.5, 1.5),
                                             rand_tensor(rng, {6, 5}, -1.5, 1.5)};
              });
    grad_case("loss r_sim",
              [](Graph& g, const std::vector<Var>& v) { return loss_r_sim(g, v[0]); },
              [&] { return std::vector<Tensor>{rand_off_kink(rng, {6, 5}, 0.1)}; });
    grad_case("loss r_euc",
              [](Graph& g, const std::vector<Var>& v) { return loss_r_euc(g, v[0], 2, 7.0); },
              [&] { return std::vector<Tensor>{rand_tensor(rng, {6, 5}, -1.5, 1.5)}; });

    // --- full training loss over all parameters ---------------------------
    {
        SynthConfig scfg;
        scfg.entity_classes = 6;
        scfg.predicate_classes = 10;
        scfg.embedding_dim = 8;
        scfg.visual_dim = 12;
        scfg.union_dim = 12;
        scfg.scenes = 4;
        scfg.pairs_per_scene = 4;
        auto data = gen_synthetic(scfg, opt.seed + 1);
        ModelConfig mcfg;
        mcfg.embedding_dim = scfg.embedding_dim;
        mcfg.visual_dim = scfg.visual_dim;
        mcfg.union_dim = scfg.union_dim;
        mcfg.semantic_dim = 16;
        mcfg.num_predicates = scfg.predicate_classes;
        ModelParams params;
        params.cfg = mcfg;
        params.init(opt.seed + 2);
        Tensor t_pred = stack_predicate_embeddings(data.dataset, data.embeddings);
        PairBatch batch = make_batch(data.dataset, {0, 1, 2, 3}, data.embeddings);
        LossConfig lcfg;  // paper defaults: k1=10, k2=1, gamma1=1, gamma2=7
        auto names_tensors = params.named();
        std::vector<std::string> names;
        std::vector<Tensor> points;
        for (auto& [n, ten] : names_tensors) {
            names.push_back(n);
            points.push_back(*ten);
        }
        GraphFn fn = [&](Graph& g, const std::vector<Var>& v) {
            ParamVars pv = param_vars_from(g, v, names, false);
            ForwardVars fv;
            fv.subj = entity_embed(g, pv, g.input(batch.t_subj), g.input(batch.x_subj),
                                   Branch::subject);
            fv.obj = entity_embed(g, pv, g.input(batch.t_obj), g.input(batch.x_obj),
                                  Branch::object);
            fv.rel = relation_rep(g, pv, fv.subj, fv.obj, g.input(batch.x_union));
            fv.protos = prototype_bank(g, pv, g.input(t_pred));
            fv.tau = g.exp_(pv.log_tau);
            return total_loss(g, pv, fv, batch.labels, lcfg).total;
        };
        auto rep = grad_check_multi(fn, points, opt.eps, opt.fault);
        report.add("grad full training loss (N=10, d=16, batch 4)", rep.max_rel_err,
                   opt.grad_tol);
    }

    // --- loss value oracles -------------------------------------------------
    {
        double worst_sim = 0.0, worst_euc = 0.0, worst_rsim = 0.0, worst_reuc = 0.0;
        for (int t = 0; t < opt.oracle_instances; ++t) {
            Tensor rel = rand_off_kink(rng, {4, 6}, 0.05);
            Tensor protos = rand_off_kink(rng, {11, 6}, 0.05);
            std::vector<std::int64_t> labels{static_cast<std::int64_t>(rng.below(11)),
                                             static_cast<std::int64_t>(rng.below(11)),
                                             static_cast<std::int64_t>(rng.below(11)),
                                             static_cast<std::int64_t>(rng.below(11))};
            const double tau = rng.uniform(0.05, 2.0);
            Graph g;
            Var rv = g.constant(rel), cv = g.constant(protos);
            worst_sim = std::max(worst_sim,
                                 std::abs(g.scalar(loss_e_sim(g, rv, cv, labels, g.number(tau))) -
                                          reference::loss_e_sim(as_mat(rel), as_mat(protos),
                                                                labels, tau)));
            worst_euc = std::max(
                worst_euc, std::abs(g.scalar(loss_e_euc(g, rv, cv, labels, 3, 1.0)) -
                                    reference::loss_e_euc(as_mat(rel), as_mat(protos), labels, 3,
                                                          1.0)));
            worst_rsim = std::max(worst_rsim, std::abs(g.scalar(loss_r_sim(g, cv)) -
                                                       reference::loss_r_sim(as_mat(protos))));
            worst_reuc = std::max(
                worst_reuc, std::abs(g.scalar(loss_r_euc(g, cv, 1, 7.0)) -
                                     reference::loss_r_euc(as_mat(protos), 1, 7.0)));
        }
        report.add("oracle loss e_sim", worst_sim, opt.oracle_tol);
        report.add("oracle loss e_euc", worst_euc, opt.oracle_tol);
        report.add("oracle loss r_sim", worst_rsim, opt.oracle_tol);
        report.add("oracle loss r_euc", worst_reuc, opt.oracle_tol);
    }
    {
        // analytic anchors
        const std::int64_t n = 11, d = 11;
        Tensor ortho = Tensor::zeros({n, d});
        for (std::int64_t i = 0; i < n; ++i) ortho.at(i, i) = 1.0;
        Tensor same = Tensor::zeros({n, 3});
        for (std::int64_t i = 0; i < n; ++i) same.at(i, 1) = 0.75;
        Graph g;
        report.add("anchor r_sim(orthonormal) = N+1",
                   std::abs(g.scalar(loss_r_sim(g, g.constant(ortho))) - static_cast<double>(n)),
                   1e-12);
        report.add("anchor r_euc(identical) = gamma2",
                   std::abs(g.scalar(loss_r_euc(g, g.constant(same), 1, 7.0)) - 7.0), 1e-12);
    }

    // --- model forward vs straight-line reference ---------------------------
    {
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            ModelParams params;
            params.cfg = mini;
            params.init(rng.raw());
            Tensor te = rand_tensor(rng, {1, mini.embedding_dim}, -1, 1);
            Tensor to = rand_tensor(rng, {1, mini.embedding_dim}, -1, 1);
            Tensor xs = rand_tensor(rng, {1, mini.visual_dim}, -1, 1);
            Tensor xo = rand_tensor(rng, {1, mini.visual_dim}, -1, 1);
            Tensor xu = rand_tensor(rng, {1, mini.union_dim}, -1, 1);
            Graph g;
            ParamVars pv = bind_params(g, params);
            Var s = entity_embed(g, pv, g.input(te), g.input(xs), Branch::subject);
            Var o = entity_embed(g, pv, g.input(to), g.input(xo), Branch::object);
            Var r = relation_rep(g, pv, s, o, g.input(xu));
            auto rs = reference::entity_embed(params, reference::Vec(te.data),
                                              reference::Vec(xs.data), Branch::subject);
            auto ro = reference::entity_embed(params, reference::Vec(to.data),
                                              reference::Vec(xo.data), Branch::object);
            auto ref = reference::relation_rep(params, rs, ro, reference::Vec(xu.data));
            for (std::int64_t j = 0; j < mini.semantic_dim; ++j)
                worst = std::max(worst, std::abs(g.val(r).at(0, j) -
                                                 ref[static_cast<std::size_t>(j)]));
        }
        report.add("oracle model forward", worst, 1e-12);
    }

    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace protorel
