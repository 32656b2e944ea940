#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "protorel/checkpoint.hpp"
#include "protorel/synthetic.hpp"
#include "protorel/trainer.hpp"

using namespace protorel;
using testutil::TempDir;

TEST_CASE("sgd update rule", "[trainer]") {
    SECTION("lr = 0 leaves weights unchanged") {
        std::vector<double> w{1.0, -2.0}, g{3.0, 4.0}, v;
        sgd_update(w, g, 0.0, 0.0, v);
        CHECK(w == std::vector<double>{1.0, -2.0});
    }
    SECTION("plain step: w=1, g=2, lr=0.1 -> 0.8") {
        std::vector<double> w{1.0}, g{2.0}, v;
        sgd_update(w, g, 0.1, 0.0, v);
        CHECK(w[0] == 0.8);
    }
    SECTION("momentum matches the hand-unrolled recurrence on f(w)=w^2") {
        const double lr = 0.1, m = 0.9;
        std::vector<double> w{1.0}, v;
        double wm = 1.0, vm = 0.0;
        for (int step = 0; step < 3; ++step) {
            std::vector<double> g{2.0 * w[0]};
            sgd_update(w, g, lr, m, v);
            vm = m * vm + 2.0 * wm;  // velocity recurrence
            wm = wm - lr * vm;
        }
        CHECK(w[0] == Catch::Approx(wm).margin(1e-15));
    }
    SECTION("non-finite gradient aborts naming the tensor") {
        ModelParams p;
        p.cfg.embedding_dim = 4;
        p.cfg.visual_dim = 4;
        p.cfg.union_dim = 4;
        p.cfg.semantic_dim = 4;
        p.cfg.num_predicates = 2;
        p.init(1);
        p.gate_obj_b.grad[0] = std::numeric_limits<double>::infinity();
        SgdState st;
        try {
            sgd_step(p, 0.1, 0.0, st);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("gate_obj_b") != std::string::npos);
        }
    }
}

namespace {

struct TrainFixture {
    SynthResult data;
    ModelConfig mcfg;

    explicit TrainFixture(double noise = 0.1, std::int64_t scenes = 30) {
        SynthConfig scfg;
        scfg.scenes = scenes;
        scfg.pairs_per_scene = 4;
        scfg.embedding_dim = 12;
        scfg.visual_dim = 16;
        scfg.union_dim = 16;
        scfg.noise = noise;
        data = gen_synthetic(scfg, 31);
        mcfg.semantic_dim = 12;
    }
};

std::vector<double> flatten(ModelParams& p) {
    std::vector<double> out;
    for (auto& [name, t] : p.named()) out.insert(out.end(), t->data.begin(), t->data.end());
    return out;
}

}  // namespace

TEST_CASE("training loop contracts", "[trainer]") {
    TrainFixture fx;
    TrainConfig tc;
    tc.batch_size = 8;
    tc.seed = 5;
    tc.loss.k1 = 3;

    SECTION("one iteration gives exactly one update and one log record") {
        tc.iterations = 1;
        auto res = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
        REQUIRE(res.log.records.size() == 1);
        CHECK(res.log.records[0].iteration == 1);
        ModelParams fresh;
        fresh.cfg = res.params.cfg;
        fresh.init(tc.seed);
        CHECK(flatten(res.params) != flatten(fresh));  // exactly one step happened
    }
    SECTION("same seed twice is bitwise identical") {
        tc.iterations = 12;
        tc.eval_every = 4;
        auto a = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
        auto b = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
        CHECK(flatten(a.params) == flatten(b.params));
        REQUIRE(a.log.records.size() == b.log.records.size());
        for (std::size_t i = 0; i < a.log.records.size(); ++i) {
            CHECK(a.log.records[i].iteration == b.log.records[i].iteration);
            CHECK(a.log.records[i].loss.total == b.log.records[i].loss.total);
            CHECK(a.log.records[i].tau == b.log.records[i].tau);
        }
        auto c = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, [&] {
            auto t = tc;
            t.seed = 6;
            return t;
        }());
        CHECK(flatten(a.params) != flatten(c.params));
    }
    SECTION("lr = 0 keeps parameters at initialization bitwise") {
        tc.iterations = 5;
        tc.lr = 0.0;
        auto res = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
        ModelParams fresh;
        fresh.cfg = res.params.cfg;
        fresh.init(tc.seed);
        CHECK(flatten(res.params) == flatten(fresh));
    }
    SECTION("tau stays inside its clamp bounds at every logged step") {
        tc.iterations = 40;
        tc.eval_every = 1;
        tc.lr = 0.05;  // aggressive, pushes tau around
        auto res = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
        for (const auto& r : res.log.records) {
            CHECK(r.tau >= fx.mcfg.tau_min);
            CHECK(r.tau <= fx.mcfg.tau_max);
        }
    }
    SECTION("missing train split is a config error") {
        Dataset no_train = fx.data.dataset;
        for (auto& s : no_train.samples) s.split = Split::test;
        CHECK_THROWS_AS(train(no_train, fx.data.embeddings, fx.mcfg, tc), ConfigError);
    }
    SECTION("training blow-up aborts and dumps the last good checkpoint") {
        TempDir dir;
        tc.iterations = 400;
        tc.lr = 1e4;  // drives the quadratic terms into inf-inf within a few steps
        tc.checkpoint_path = dir.file("last_good.json");
        CHECK_THROWS_AS(train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc), NumericError);
        CHECK(std::filesystem::exists(dir.file("last_good.json")));
        auto ck = load_checkpoint(dir.file("last_good.json"));
        for (double v : flatten(ck.params)) CHECK(std::isfinite(v));
    }
}

TEST_CASE("separable data trains to a fraction of the initial loss", "[trainer][slow]") {
    TrainFixture fx(0.05, 100);
    TrainConfig tc;
    tc.iterations = 2000;
    tc.batch_size = 32;
    tc.eval_every = 1;
    tc.seed = 9;
    tc.loss.k1 = 3;
    tc.loss.enable_pr = false;  // matching losses only; the l2,1 term has a floor of N+1
    auto res = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
    const double initial = res.log.records.front().loss.total;
    const double final_loss = res.log.records.back().loss.total;
    CHECK(final_loss < 0.10 * initial);
}

TEST_CASE("checkpoint round trip", "[trainer]") {
    TempDir dir;
    ModelParams p;
    p.cfg.embedding_dim = 6;
    p.cfg.visual_dim = 5;
    p.cfg.union_dim = 7;  // exercises the separate union map
    p.cfg.semantic_dim = 4;
    p.cfg.num_predicates = 3;
    p.init(77);
    nlohmann::json rc{{"note", "test"}};

    SECTION("save then load is the identity") {
        save_checkpoint(dir.file("ck.json"), p, rc, 123);
        auto ck = load_checkpoint(dir.file("ck.json"));
        CHECK(ck.seed == 123);
        CHECK(ck.run_config == rc);
        CHECK(ck.params.cfg == p.cfg);
        CHECK(flatten(ck.params) == flatten(p));
    }
    SECTION("truncated file is a parse error") {
        save_checkpoint(dir.file("ck.json"), p, rc, 1);
        auto text = testutil::read_file(dir.file("ck.json"));
        testutil::write_file(dir.file("cut.json"), text.substr(0, text.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(dir.file("cut.json")), FormatError);
    }
    SECTION("version mismatch is an explicit error") {
        save_checkpoint(dir.file("ck.json"), p, rc, 1);
        auto text = testutil::read_file(dir.file("ck.json"));
        auto pos = text.find("\"version\":1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 11, "\"version\":9");
        testutil::write_file(dir.file("v9.json"), text);
        try {
            load_checkpoint(dir.file("v9.json"));
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    SECTION("mismatched width between config and tensors is a shape error") {
        save_checkpoint(dir.file("ck.json"), p, rc, 1);
        auto text = testutil::read_file(dir.file("ck.json"));
        auto pos = text.find("\"semantic_dim\":4");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 16, "\"semantic_dim\":8");
        testutil::write_file(dir.file("d8.json"), text);
        CHECK_THROWS_AS(load_checkpoint(dir.file("d8.json")), ShapeError);
    }
}

TEST_CASE("train log csv", "[trainer]") {
    TempDir dir;
    TrainFixture fx;
    TrainConfig tc;
    tc.iterations = 6;
    tc.eval_every = 2;
    tc.seed = 3;
    tc.loss.k1 = 3;
    auto res = train(fx.data.dataset, fx.data.embeddings, fx.mcfg, tc);
    res.log.write_csv(dir.file("log.csv"));
    auto text = testutil::read_file(dir.file("log.csv"));
    CHECK(text.rfind("iteration,l_e_sim,l_e_euc,l_r_sim,l_r_euc,total,tau,seconds\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 3 records
}
