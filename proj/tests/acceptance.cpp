// Acceptance suite: one pass/fail line per criterion, non-zero exit if any
// fail. Thresholds are fixed here, not tuned at run time.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "protorel/checkpoint.hpp"
#include "protorel/metrics.hpp"
#include "protorel/reference.hpp"
#include "protorel/rng.hpp"
#include "protorel/selfcheck.hpp"
#include "protorel/synthetic.hpp"
#include "protorel/trainer.hpp"

using namespace protorel;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int idx, bool pass, const std::string& what, const std::string& detail) {
    std::printf("criterion %d: %-4s %s (%s)\n", idx, pass ? "PASS" : "FAIL", what.c_str(),
                detail.c_str());
    std::fflush(stdout);
    g_failures += !pass;
}

void report_error(int idx, const std::string& what, const std::string& err) {
    report(idx, false, what, "exception: " + err);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

// ---------------------------------------------------------------- 1 & 2

void criteria_gradients_and_oracles() {
    const char* what1 = "gradient fidelity: every op and the full training loss < 1e-5, < 60 s";
    const char* what2 = "loss oracles: straight-line match < 1e-10, analytic anchors exact";
    try {
        SelfcheckOptions opt;  // 20 trials per op, eps 2e-5, N=10/d=16/batch-4 full loss
        auto rep = run_selfcheck(opt);
        double worst_grad = 0.0;
        std::string worst_name;
        bool oracles_ok = true;
        double worst_oracle = 0.0;
        for (const auto& c : rep.checks) {
            if (c.name.rfind("grad", 0) == 0 && c.max_err > worst_grad) {
                worst_grad = c.max_err;
                worst_name = c.name;
            }
            if (c.name.rfind("oracle", 0) == 0 || c.name.rfind("anchor", 0) == 0) {
                oracles_ok = oracles_ok && c.pass;
                worst_oracle = std::max(worst_oracle, c.max_err);
            }
        }
        report(1, worst_grad < 1e-5 && rep.seconds < 60.0, what1,
               fmt("max rel err %.3e in '%s', %.1f s", worst_grad, worst_name.c_str(),
                   rep.seconds));
        report(2, oracles_ok, what2, fmt("worst abs deviation %.3e", worst_oracle));
    } catch (const std::exception& e) {
        report_error(1, what1, e.what());
        report_error(2, what2, e.what());
    }
}

// ---------------------------------------------------------------- 3

void criterion_learnability() {
    const char* what = "learnability: separable data reaches test top-1 >= 0.95 in 2000 iters";
    try {
        SynthConfig scfg;  // E=10, N=10, 200 scenes, defaults elsewhere
        scfg.noise = 0.05;
        auto data = gen_synthetic(scfg, 1);
        ModelConfig mcfg;
        mcfg.semantic_dim = 64;
        TrainConfig tc;
        tc.iterations = 2000;
        tc.batch_size = 64;
        tc.lr = 1e-3;
        tc.seed = 1;
        tc.eval_every = 500;
        tc.loss.enable_pr = false;  // prototype matching only
        const auto t0 = std::chrono::steady_clock::now();
        auto res = train(data.dataset, data.embeddings, mcfg, tc);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        auto ev = evaluate(res.params, data.dataset, data.embeddings, Split::test);
        const bool pass = ev.top1_accuracy >= 0.95 && secs < 120.0;
        report(3, pass, what, fmt("accuracy %.4f, %.1f s", ev.top1_accuracy, secs));
    } catch (const std::exception& e) {
        report_error(3, what, e.what());
    }
}

// ---------------------------------------------------------------- 4, 5, 6

struct AblationOutcome {
    double mr_baseline, mr_pl, mr_plpr;
    double max_cos_pl, max_cos_plpr;   // cosine similarity of the closest prototype pair
    double min_dist_pl, min_dist_plpr; // squared distance of the closest prototype pair
    double iv_baseline, iv_plpr, iivr_baseline, iivr_plpr;
};

std::pair<double, double> prototype_geometry(ModelParams& params, const Dataset& ds,
                                             const WordEmbeddingTable& emb) {
    Tensor t_pred = stack_predicate_embeddings(ds, emb);
    Graph g;
    ParamVars pv = bind_params(g, params);
    const Tensor protos = g.val(prototype_bank(g, pv, g.input(t_pred)));
    reference::Mat rows;
    for (std::int64_t r = 0; r < protos.shape[0]; ++r)
        rows.emplace_back(protos.data.begin() + r * protos.shape[1],
                          protos.data.begin() + (r + 1) * protos.shape[1]);
    double max_cos = -1e300, min_dist = 1e300;
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            max_cos = std::max(max_cos, reference::cosine(rows[i], rows[j]));
            min_dist = std::min(min_dist, reference::sqdist(rows[i], rows[j]));
        }
    return {max_cos, min_dist};
}

AblationOutcome run_ablation_seed(std::uint64_t seed) {
    SynthConfig scfg;
    scfg.entity_classes = 10;
    scfg.predicate_classes = 25;
    scfg.zipf_exponent = 1.5;  // long-tail shape under test
    scfg.noise = 0.3;
    scfg.pair_signature_scale = 0.5;
    scfg.scenes = 400;
    scfg.pairs_per_scene = 6;
    scfg.embedding_dim = 16;
    scfg.visual_dim = 24;
    scfg.union_dim = 24;
    scfg.predicate_groups = 8;  // families of near-synonymous predicates
    scfg.semantic_overlap = 1.0;
    scfg.visual_overlap = 0.8;
    auto data = gen_synthetic(scfg, seed);

    AblationOutcome out{};
    for (int mode = 0; mode < 3; ++mode) {  // 0 baseline, 1 PL, 2 PL+PR
        ModelConfig mcfg;
        mcfg.semantic_dim = 48;
        TrainConfig tc;
        tc.iterations = 4000;
        tc.batch_size = 32;
        tc.lr = 1e-3;
        tc.seed = seed;  // matched seeds across the three configurations
        tc.eval_every = 4000;
        tc.loss.enable_pl = mode >= 1;
        tc.loss.enable_pr = mode == 2;
        auto res = train(data.dataset, data.embeddings, mcfg, tc);
        auto ev = evaluate(res.params, data.dataset, data.embeddings, Split::test, nullptr,
                           {20},
                           mode == 0 ? PredictionHead::linear : PredictionHead::prototype);
        const double mr = ev.at_k.at(20).mean_recall;
        if (mode == 0) {
            out.mr_baseline = mr;
            out.iv_baseline = ev.iv_relations;
            out.iivr_baseline = ev.iivr_relations;
        } else if (mode == 1) {
            out.mr_pl = mr;
            auto [mc, md] = prototype_geometry(res.params, data.dataset, data.embeddings);
            out.max_cos_pl = mc;
            out.min_dist_pl = md;
        } else {
            out.mr_plpr = mr;
            out.iv_plpr = ev.iv_relations;
            out.iivr_plpr = ev.iivr_relations;
            auto [mc, md] = prototype_geometry(res.params, data.dataset, data.embeddings);
            out.max_cos_plpr = mc;
            out.min_dist_plpr = md;
        }
    }
    return out;
}

void criteria_ablation() {
    const char* what4 = "ablation ordering on mR@20: PL+PR > PL > baseline, margin >= 0.02";
    const char* what5 = "regularized prototypes: closest pair less similar and further apart";
    const char* what6 = "relation representations: IV and IIVR below the baseline head's";
    try {
        const std::vector<std::uint64_t> seeds{101, 102, 103, 104, 105};
        std::vector<double> base, pl, plpr;
        int geo_ok = 0, iv_ok = 0;
        for (auto seed : seeds) {
            auto o = run_ablation_seed(seed);
            base.push_back(o.mr_baseline);
            pl.push_back(o.mr_pl);
            plpr.push_back(o.mr_plpr);
            geo_ok += o.max_cos_plpr < o.max_cos_pl && o.min_dist_plpr > o.min_dist_pl;
            iv_ok += o.iv_plpr < o.iv_baseline && o.iivr_plpr < o.iivr_baseline;
        }
        const double m0 = median(base), m1 = median(pl), m2 = median(plpr);
        report(4, m2 >= m1 + 0.02 && m1 >= m0 + 0.02, what4,
               fmt("medians: PL+PR %.3f, PL %.3f, baseline %.3f", m2, m1, m0));
        report(5, geo_ok == 5, what5, fmt("%d/5 seeds", geo_ok));
        report(6, iv_ok == 5, what6, fmt("%d/5 seeds", iv_ok));
    } catch (const std::exception& e) {
        report_error(4, what4, e.what());
        report_error(5, what5, e.what());
        report_error(6, what6, e.what());
    }
}

// ---------------------------------------------------------------- 7

void criterion_zero_shot() {
    const char* what = "zero-shot: zs-R@20 at least 3x the 1/N chance rate, median of 5 seeds";
    try {
        std::vector<double> zs;
        for (std::uint64_t seed : {201, 202, 203, 204, 205}) {
            SynthConfig scfg;
            scfg.entity_classes = 10;
            scfg.predicate_classes = 10;
            scfg.noise = 0.1;
            scfg.scenes = 200;
            scfg.zero_shot_fraction = 0.1;
            scfg.embedding_dim = 16;
            scfg.visual_dim = 24;
            scfg.union_dim = 24;
            auto data = gen_synthetic(scfg, seed);
            ModelConfig mcfg;
            mcfg.semantic_dim = 48;
            TrainConfig tc;
            tc.iterations = 1200;
            tc.batch_size = 32;
            tc.lr = 1e-3;
            tc.seed = seed;
            tc.eval_every = 1200;
            auto res = train(data.dataset, data.embeddings, mcfg, tc);
            auto ev = evaluate(res.params, data.dataset, data.embeddings, Split::test,
                               &data.ledger, {20});
            if (!ev.at_k.at(20).zs_recall) throw ValidationError("zs recall undefined");
            zs.push_back(*ev.at_k.at(20).zs_recall);
        }
        const double med = median(zs);
        const double chance = 1.0 / 10.0;
        report(7, med >= 3.0 * chance, what, fmt("median zs-R@20 %.3f vs chance %.2f", med, chance));
    } catch (const std::exception& e) {
        report_error(7, what, e.what());
    }
}

// ---------------------------------------------------------------- 8

void criterion_metric_oracles() {
    const char* what = "metric oracles: exhaustive candidate ranking matches exactly; M@100 check";
    try {
        Rng rng(777);
        const std::int64_t nc = 6;
        ZeroShotLedger ledger;
        for (int i = 0; i < 12; ++i)
            ledger.triplets.insert({rng.below(4), rng.below(4), 1 + rng.below(nc - 1)});

        // 20 random toy scenes with synthetic predictions
        std::vector<Scene> scenes(20);
        for (auto& scene : scenes) {
            const int pairs = 3 + static_cast<int>(rng.below(6));
            for (int i = 0; i < pairs; ++i) {
                ScenePair sp;
                sp.subject_class = rng.below(4);
                sp.object_class = rng.below(4);
                sp.predicate_class = rng.below(nc);
                sp.pred.scores.assign(static_cast<std::size_t>(nc), 0.0);
                sp.pred.cls = rng.below(nc);
                sp.pred.scores[static_cast<std::size_t>(sp.pred.cls)] = 1.0;
                sp.pred.confidence = rng.uniform01();
                scene.push_back(sp);
            }
        }

        bool exact = true;
        for (std::int64_t k : {1, 2, 3, 5, 20, 50, 100}) {
            auto rr = recall_at_k(scenes, k, &ledger);
            // independent oracle: materialize, rank, count
            std::int64_t matched = 0, total = 0, zs_m = 0, zs_t = 0;
            std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> per_class;
            for (const auto& scene : scenes) {
                std::vector<std::pair<double, std::size_t>> cands;
                for (std::size_t i = 0; i < scene.size(); ++i)
                    cands.push_back({scene[i].pred.confidence, i});
                std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
                    return a.first != b.first ? a.first > b.first : a.second < b.second;
                });
                std::set<std::size_t> top;
                for (std::size_t i = 0; i < cands.size() && i < static_cast<std::size_t>(k); ++i)
                    top.insert(cands[i].second);
                for (std::size_t i = 0; i < scene.size(); ++i) {
                    const auto& p = scene[i];
                    if (p.predicate_class == 0) continue;
                    const bool hit = top.count(i) && p.pred.cls == p.predicate_class;
                    ++total;
                    matched += hit;
                    ++per_class[p.predicate_class].second;
                    per_class[p.predicate_class].first += hit;
                    if (ledger.contains(p.subject_class, p.object_class, p.predicate_class)) {
                        ++zs_t;
                        zs_m += hit;
                    }
                }
            }
            exact = exact && rr.overall.matched == matched && rr.overall.total == total;
            exact = exact && rr.zero_shot && rr.zero_shot->matched == zs_m &&
                    rr.zero_shot->total == zs_t;
            double mr_oracle = 0.0;
            for (const auto& [cls, mt] : per_class) {
                exact = exact && rr.per_class.at(cls).matched == mt.first &&
                        rr.per_class.at(cls).total == mt.second;
                mr_oracle += static_cast<double>(mt.first) / static_cast<double>(mt.second);
            }
            mr_oracle /= static_cast<double>(per_class.size());
            auto [mr, mk] = mean_metrics(rr.per_class, rr.recall());
            exact = exact && std::abs(mr - mr_oracle) < 1e-15 &&
                    std::abs(mk - (rr.recall() + mr) / 2.0) < 1e-15;
        }

        // published-style combination check
        std::map<std::int64_t, RecallCounts> table;
        table[1] = {169, 500};
        table[2] = {169, 500};
        auto [mr, mk] = mean_metrics(table, 0.672);
        const bool m_ok = std::abs(mr - 0.338) < 1e-12 && std::abs(mk - 0.505) < 1e-12;
        report(8, exact && m_ok, what,
               fmt("ranking oracle %s; M@100(0.672, 0.338) = %.3f", exact ? "exact" : "MISMATCH",
                   mk));
    } catch (const std::exception& e) {
        report_error(8, what, e.what());
    }
}

// ---------------------------------------------------------------- 9

std::string sh(const std::string& cmd, int* code) {
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) throw IoError("popen failed");
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    const int status = pclose(pipe);
    *code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

std::string run_dir_of(const std::string& output) {
    auto pos = output.find("run dir:");
    if (pos == std::string::npos) throw Error("no run dir in output:\n" + output);
    auto start = output.find_first_not_of(" \t", pos + 8);
    return output.substr(start, output.find('\n', start) - start);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// train log without the wall-clock column
std::string strip_seconds(const std::string& csv) {
    std::istringstream in(csv);
    std::string out, line;
    while (std::getline(in, line)) {
        auto pos = line.rfind(',');
        out += line.substr(0, pos);
        out += '\n';
    }
    return out;
}

void criterion_determinism() {
    const char* what = "determinism: identical config and seed reproduce checkpoint and log";
    try {
        const char* bin = std::getenv("PROTOREL_BIN");
        if (!bin) throw ConfigError("PROTOREL_BIN not set");
        fs::path work = fs::temp_directory_path() /
                        ("protorel-accept-" + std::to_string(std::random_device{}()));
        fs::create_directories(work);
        const std::string cfg = (work / "cfg.json").string();
        {
            std::ofstream out(cfg);
            out << R"({"synth":{"scenes":30,"pairs_per_scene":4,"embedding_dim":12,
                        "visual_dim":16,"union_dim":16},
                       "model":{"semantic_dim":24},
                       "train":{"iterations":200,"batch_size":16,"eval_every":50},
                       "loss":{"k1":3}})";
        }
        int code = 0;
        auto gen = sh(std::string(bin) + " gen-data -c " + cfg + " --seed 77 --out-dir " +
                          (work / "data").string(),
                      &code);
        if (code != 0) throw Error("gen-data failed:\n" + gen);
        const std::string data_dir = run_dir_of(gen);
        auto train_once = [&]() {
            int c = 0;
            auto out = sh(std::string(bin) + " train -c " + cfg + " --seed 77 --dataset " +
                              data_dir + "/dataset.jsonl --embeddings " + data_dir +
                              "/embeddings.txt --out-dir " + (work / "runs").string(),
                          &c);
            if (c != 0) throw Error("train failed:\n" + out);
            return run_dir_of(out);
        };
        const std::string a = train_once();
        const std::string b = train_once();
        const bool ck_same = slurp(a + "/checkpoint.json") == slurp(b + "/checkpoint.json");
        const bool log_same = strip_seconds(slurp(a + "/train_log.csv")) ==
                              strip_seconds(slurp(b + "/train_log.csv"));
        std::error_code ec;
        fs::remove_all(work, ec);
        report(9, ck_same && log_same, what,
               fmt("checkpoint bytes %s, log (minus wall time) %s",
                   ck_same ? "identical" : "DIFFER", log_same ? "identical" : "DIFFER"));
    } catch (const std::exception& e) {
        report_error(9, what, e.what());
    }
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criteria_gradients_and_oracles();
    criterion_learnability();
    criteria_ablation();
    criterion_zero_shot();
    criterion_metric_oracles();
    criterion_determinism();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("acceptance: %d/9 criteria passed (%.1f s)\n", 9 - g_failures, secs);
    return g_failures == 0 ? 0 : 1;
}
