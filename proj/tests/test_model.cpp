#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "protorel/losses.hpp"
#include "protorel/model.hpp"
#include "protorel/reference.hpp"
#include "protorel/synthetic.hpp"
#include "protorel/rng.hpp"

using namespace protorel;

namespace {

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.embedding_dim = 6;
    cfg.visual_dim = 5;
    cfg.union_dim = 5;
    cfg.semantic_dim = 4;
    cfg.num_predicates = 3;
    return cfg;
}

Tensor rand_rows(Rng& rng, std::int64_t r, std::int64_t c, double scale = 1.0) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& x : t.data) x = rng.gaussian() * scale;
    return t;
}

reference::Vec row_of(const Tensor& t, std::int64_t r) {
    return reference::Vec(t.data.begin() + r * t.shape[1], t.data.begin() + (r + 1) * t.shape[1]);
}

}  // namespace

TEST_CASE("entity embedding special cases", "[model]") {
    ModelParams p;
    p.cfg = small_cfg();
    p.init(123);
    Rng rng(5);
    Tensor t = rand_rows(rng, 1, p.cfg.embedding_dim);
    Tensor x = rand_rows(rng, 1, p.cfg.visual_dim);

    SECTION("zeroed output layer silences the visual path: s = W_s t exactly") {
        for (auto& v : p.vis_out_w.data) v = 0.0;
        Graph g;
        auto pv = bind_params(g, p);
        Var s = entity_embed(g, pv, g.input(t), g.input(x), Branch::subject);
        Var proto = g.matmul(g.input(t), g.transpose(pv.proj_subj));
        for (std::int64_t i = 0; i < p.cfg.semantic_dim; ++i)
            CHECK(g.val(s).at(0, i) == g.val(proto).at(0, i));
    }
    SECTION("saturated gate passes the visual content through: s = W_s t + h(x)") {
        for (auto& v : p.gate_subj_b.data) v = 1000.0;  // sigmoid == 1.0 in double
        Graph g;
        auto pv = bind_params(g, p);
        Var s = entity_embed(g, pv, g.input(t), g.input(x), Branch::subject);
        Var expect = g.add(g.matmul(g.input(t), g.transpose(pv.proj_subj)),
                           visual_to_semantic(g, pv, g.input(x), false));
        for (std::int64_t i = 0; i < p.cfg.semantic_dim; ++i)
            CHECK(g.val(s).at(0, i) == g.val(expect).at(0, i));
    }
    SECTION("random inputs match the straight-line evaluation") {
        Graph g;
        auto pv = bind_params(g, p);
        Var s = entity_embed(g, pv, g.input(t), g.input(x), Branch::object);
        auto ref = reference::entity_embed(p, row_of(t, 0), row_of(x, 0), Branch::object);
        for (std::int64_t i = 0; i < p.cfg.semantic_dim; ++i)
            CHECK(g.val(s).at(0, i) == Catch::Approx(ref[static_cast<std::size_t>(i)]).margin(1e-12));
    }
    SECTION("width mismatch raises a dimension error") {
        Graph g;
        auto pv = bind_params(g, p);
        Tensor bad = rand_rows(rng, 1, p.cfg.visual_dim + 2);
        CHECK_THROWS_AS(entity_embed(g, pv, g.input(t), g.input(bad), Branch::subject),
                        ShapeError);
    }
}

TEST_CASE("pair fusion", "[model]") {
    Graph g;
    SECTION("zero inputs give zero") {
        Var v = fuse(g, g.constant(Tensor::matrix({{0.0, 0.0}})),
                     g.constant(Tensor::matrix({{0.0, 0.0}})));
        CHECK(g.val(v).at(0, 0) == 0.0);
        CHECK(g.val(v).at(0, 1) == 0.0);
    }
    SECTION("equal inputs cancel the difference term: ReLU(2v)") {
        Var a = g.constant(Tensor::matrix({{0.7, -0.3}}));
        Var v = fuse(g, a, a);
        CHECK(g.val(v).at(0, 0) == Catch::Approx(1.4));
        CHECK(g.val(v).at(0, 1) == 0.0);
    }
    SECTION("hand-evaluated case") {
        Var v = fuse(g, g.constant(Tensor::matrix({{1.0, -1.0}})),
                     g.constant(Tensor::matrix({{0.5, 0.5}})));
        CHECK(g.val(v).at(0, 0) == Catch::Approx(1.25).margin(1e-15));
        CHECK(g.val(v).at(0, 1) == Catch::Approx(-2.25).margin(1e-15));
    }
}

TEST_CASE("predicate content and relation representation", "[model]") {
    ModelParams p;
    p.cfg = small_cfg();
    p.init(321);
    Rng rng(17);
    const std::int64_t d = p.cfg.semantic_dim;
    Tensor s = rand_rows(rng, 2, d), o = rand_rows(rng, 2, d);
    Tensor xu = rand_rows(rng, 2, p.cfg.union_dim);

    SECTION("silenced union path gives zero content and r = fuse(s, o)") {
        for (auto& v : p.vis_out_w.data) v = 0.0;
        Graph g;
        auto pv = bind_params(g, p);
        Var up = predicate_content(g, pv, g.input(s), g.input(o), g.input(xu));
        for (double v : g.val(up).data) CHECK(v == 0.0);
        Var r = relation_rep(g, pv, g.input(s), g.input(o), g.input(xu));
        Var f = fuse(g, g.input(s), g.input(o));
        for (std::int64_t i = 0; i < 2 * d; ++i)
            CHECK(g.val(r).data[static_cast<std::size_t>(i)] ==
                  g.val(f).data[static_cast<std::size_t>(i)]);
    }
    SECTION("saturated gate returns h(x_u)") {
        for (auto& v : p.gate_pred_b.data) v = 1000.0;
        Graph g;
        auto pv = bind_params(g, p);
        Var up = predicate_content(g, pv, g.input(s), g.input(o), g.input(xu));
        Var hx = visual_to_semantic(g, pv, g.input(xu), true);
        for (std::int64_t i = 0; i < 2 * d; ++i)
            CHECK(g.val(up).data[static_cast<std::size_t>(i)] ==
                  g.val(hx).data[static_cast<std::size_t>(i)]);
    }
    SECTION("zero entities and silenced union path give r = 0") {
        for (auto& v : p.vis_out_w.data) v = 0.0;
        Graph g;
        auto pv = bind_params(g, p);
        Tensor zs = Tensor::zeros({2, d});
        Var r = relation_rep(g, pv, g.input(zs), g.input(zs), g.input(xu));
        for (double v : g.val(r).data) CHECK(v == 0.0);
    }
    SECTION("random batch matches the straight-line composition") {
        Graph g;
        auto pv = bind_params(g, p);
        Var up = predicate_content(g, pv, g.input(s), g.input(o), g.input(xu));
        Var r = relation_rep(g, pv, g.input(s), g.input(o), g.input(xu));
        for (std::int64_t b = 0; b < 2; ++b) {
            auto ref_u = reference::predicate_content(p, row_of(s, b), row_of(o, b), row_of(xu, b));
            auto ref_r = reference::relation_rep(p, row_of(s, b), row_of(o, b), row_of(xu, b));
            for (std::int64_t i = 0; i < d; ++i) {
                CHECK(g.val(up).at(b, i) ==
                      Catch::Approx(ref_u[static_cast<std::size_t>(i)]).margin(1e-12));
                CHECK(g.val(r).at(b, i) ==
                      Catch::Approx(ref_r[static_cast<std::size_t>(i)]).margin(1e-12));
            }
        }
    }
}

TEST_CASE("prototype bank", "[model]") {
    ModelParams p;
    p.cfg = small_cfg();
    p.cfg.embedding_dim = p.cfg.semantic_dim;  // square so identity works
    p.init(9);
    Rng rng(31);
    Tensor t_pred = rand_rows(rng, p.cfg.num_predicates + 1, p.cfg.embedding_dim);

    SECTION("identity projection stacks the word vectors") {
        for (auto& v : p.proj_pred.data) v = 0.0;
        for (std::int64_t i = 0; i < p.cfg.semantic_dim; ++i) p.proj_pred.at(i, i) = 1.0;
        Graph g;
        auto pv = bind_params(g, p);
        Var c = prototype_bank(g, pv, g.input(t_pred));
        CHECK(g.val(c).data == t_pred.data);
    }
    SECTION("zero projection collapses the bank to zero") {
        for (auto& v : p.proj_pred.data) v = 0.0;
        Graph g;
        auto pv = bind_params(g, p);
        Var c = prototype_bank(g, pv, g.input(t_pred));
        for (double v : g.val(c).data) CHECK(v == 0.0);
    }
    SECTION("random projection matches the row-by-row product") {
        Graph g;
        auto pv = bind_params(g, p);
        Var c = prototype_bank(g, pv, g.input(t_pred));
        auto ref = reference::prototypes(p, {row_of(t_pred, 0), row_of(t_pred, 1),
                                             row_of(t_pred, 2), row_of(t_pred, 3)});
        for (std::int64_t i = 0; i <= p.cfg.num_predicates; ++i)
            for (std::int64_t j = 0; j < p.cfg.semantic_dim; ++j)
                CHECK(g.val(c).at(i, j) ==
                      Catch::Approx(ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
                          .margin(1e-12));
    }
}

TEST_CASE("prototype dominance: zero features collapse onto prototypes", "[model]") {
    // h has no bias anywhere, so h(0) = 0 at any parameter state.
    ModelParams p;
    p.cfg = small_cfg();
    p.init(777);
    for (auto& v : p.gate_subj_b.data) v = 0.37;  // arbitrary non-init state
    Rng rng(2);
    Tensor t = rand_rows(rng, 3, p.cfg.embedding_dim);
    Tensor zx = Tensor::zeros({3, p.cfg.visual_dim});
    Graph g;
    auto pv = bind_params(g, p);
    Var s = entity_embed(g, pv, g.input(t), g.input(zx), Branch::subject);
    Var proto = g.matmul(g.input(t), g.transpose(pv.proj_subj));
    for (std::size_t i = 0; i < g.val(s).data.size(); ++i)
        CHECK(g.val(s).data[i] == g.val(proto).data[i]);
}

TEST_CASE("permutation consistency of the batch forward", "[model]") {
    SynthConfig scfg;
    scfg.scenes = 4;
    scfg.pairs_per_scene = 3;
    auto data = gen_synthetic(scfg, 11);
    ModelParams p;
    p.cfg.embedding_dim = scfg.embedding_dim;
    p.cfg.visual_dim = scfg.visual_dim;
    p.cfg.union_dim = scfg.union_dim;
    p.cfg.semantic_dim = 8;
    p.cfg.num_predicates = scfg.predicate_classes;
    p.init(55);
    Tensor t_pred = stack_predicate_embeddings(data.dataset, data.embeddings);

    std::vector<std::int64_t> idx{0, 1, 2, 3, 4};
    std::vector<std::int64_t> perm{3, 0, 4, 2, 1};
    auto a = run_forward(p, make_batch(data.dataset, idx, data.embeddings), t_pred);
    auto b = run_forward(p, make_batch(data.dataset, perm, data.embeddings), t_pred);
    for (std::size_t r = 0; r < perm.size(); ++r) {
        const auto src = static_cast<std::int64_t>(r);
        std::int64_t dst = -1;
        for (std::size_t j = 0; j < perm.size(); ++j)
            if (perm[j] == idx[r]) dst = static_cast<std::int64_t>(j);
        for (std::int64_t c = 0; c < p.cfg.semantic_dim; ++c) {
            CHECK(a.rel.at(src, c) == b.rel.at(dst, c));
            CHECK(a.subj.at(src, c) == b.subj.at(dst, c));
            CHECK(a.obj.at(src, c) == b.obj.at(dst, c));
        }
    }
}

TEST_CASE("gradient flows into every parameter group", "[model]") {
    SynthConfig scfg;
    scfg.scenes = 6;
    scfg.pairs_per_scene = 4;
    auto data = gen_synthetic(scfg, 13);
    ModelParams p;
    p.cfg.embedding_dim = scfg.embedding_dim;
    p.cfg.visual_dim = scfg.visual_dim;
    p.cfg.union_dim = scfg.union_dim;
    p.cfg.semantic_dim = 8;
    p.cfg.num_predicates = scfg.predicate_classes;
    p.init(101);
    Tensor t_pred = stack_predicate_embeddings(data.dataset, data.embeddings);

    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < 8; ++i) idx.push_back(i);
    PairBatch batch = make_batch(data.dataset, idx, data.embeddings);

    LossConfig lcfg;
    lcfg.k1 = 3;
    Graph g;
    auto pv = bind_params(g, p);
    auto fv = forward_batch(g, pv, batch, t_pred);
    auto lv = total_loss(g, pv, fv, batch.labels, lcfg);
    g.backward(lv.total);

    auto grad_norm = [](const Tensor& t) {
        double acc = 0.0;
        for (double v : t.grad) acc += v * v;
        return std::sqrt(acc);
    };
    for (auto& [name, t] : p.named()) {
        if (name == "cls_w" || name == "cls_b") continue;  // baseline head only
        INFO(name);
        CHECK(grad_norm(*t) > 0.0);
    }
}
