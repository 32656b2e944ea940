#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "protorel/dataset.hpp"
#include "protorel/errors.hpp"
#include "protorel/model.hpp"

namespace protorel {

struct Prediction {
    std::vector<double> scores;  // similarity (or logit) per class, length N+1
    std::int64_t cls = 0;        // argmax, ties to the lowest index
    double confidence = 0.0;     // softmax probability of cls
};

namespace metricdetail {

inline Prediction from_scores(std::vector<double> scores) {
    Prediction p;
    p.scores = std::move(scores);
    for (std::size_t j = 1; j < p.scores.size(); ++j)
        if (p.scores[j] > p.scores[static_cast<std::size_t>(p.cls)])
            p.cls = static_cast<std::int64_t>(j);
    double m = p.scores[static_cast<std::size_t>(p.cls)];
    double denom = 0.0;
    for (double q : p.scores) denom += std::exp(q - m);
    p.confidence = 1.0 / denom;  // exp(0) over the shifted sum
    return p;
}

}  // namespace metricdetail

// Nearest-prototype classification: scores are cosine similarities over the
// temperature; the predicted class is the highest-scoring prototype.
inline Prediction predict(const std::vector<double>& rel, const Tensor& protos, double tau) {
    const std::int64_t n = protos.shape[0], d = protos.shape[1];
    if (static_cast<std::int64_t>(rel.size()) != d)
        throw ShapeError("predict: representation width " + std::to_string(rel.size()) +
                         " != prototype width " + std::to_string(d));
    double rn = 0.0;
    for (double v : rel) rn += v * v;
    rn = std::sqrt(rn);
    if (rn == 0.0) throw NormalizationError("predict: zero-norm relation representation");
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0.0, cn = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            dot += rel[static_cast<std::size_t>(j)] * protos.at(i, j);
            cn += protos.at(i, j) * protos.at(i, j);
        }
        cn = std::sqrt(cn);
        if (cn == 0.0)
            throw NormalizationError("predict: zero-norm prototype row " + std::to_string(i));
        scores[static_cast<std::size_t>(i)] = dot / (rn * cn * tau);
    }
    return metricdetail::from_scores(std::move(scores));
}

// One evaluated subject-object pair: ground truth plus the model prediction.
struct ScenePair {
    std::int64_t subject_class = 0;
    std::int64_t object_class = 0;
    std::int64_t predicate_class = 0;  // ground truth; 0 = background
    Prediction pred;
};
using Scene = std::vector<ScenePair>;

struct RecallCounts {
    std::int64_t matched = 0;
    std::int64_t total = 0;
    double value() const {
        return total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
    }
};

struct RecallResult {
    RecallCounts overall;                           // background ground truth excluded
    std::map<std::int64_t, RecallCounts> per_class; // over classes with >= 1 ground truth
    std::optional<RecallCounts> zero_shot;          // restricted to ledger triplets

    double recall() const { return overall.value(); }
};

// Graph-constrained recall: each pair contributes its single top-1 predicate
// with its confidence; candidates are ranked per scene by (confidence,
// then pair index) and the top K retained. A retained candidate matches its
// pair's ground truth iff the classes agree; background ground truth never
// enters a denominator.
inline RecallResult recall_at_k(const std::vector<Scene>& scenes, std::int64_t k,
                                const ZeroShotLedger* ledger = nullptr) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    RecallResult res;
    if (ledger) res.zero_shot = RecallCounts{};
    for (const auto& scene : scenes) {
        std::vector<std::size_t> order(scene.size());
        for (std::size_t i = 0; i < scene.size(); ++i) {
            if (scene[i].pred.scores.empty())
                throw ValidationError("recall_at_k: pair without a prediction");
            order[i] = i;
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scene[a].pred.confidence > scene[b].pred.confidence;
        });
        const std::size_t keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
        std::vector<bool> in_top(scene.size(), false);
        for (std::size_t i = 0; i < keep; ++i) in_top[order[i]] = true;
        for (std::size_t i = 0; i < scene.size(); ++i) {
            const auto& pair = scene[i];
            if (pair.predicate_class == 0) continue;
            const bool hit = in_top[i] && pair.pred.cls == pair.predicate_class;
            ++res.overall.total;
            res.overall.matched += hit;
            auto& pc = res.per_class[pair.predicate_class];
            ++pc.total;
            pc.matched += hit;
            if (ledger &&
                ledger->contains(pair.subject_class, pair.object_class, pair.predicate_class)) {
                ++res.zero_shot->total;
                res.zero_shot->matched += hit;
            }
        }
    }
    return res;
}

// (mR@K, M@K) from the per-class table and R@K. Classes without ground truth
// are absent from the table by construction.
inline std::pair<double, double> mean_metrics(
    const std::map<std::int64_t, RecallCounts>& per_class, double recall) {
    if (per_class.empty())
        throw ValidationError("mean_metrics: no class has ground truth; mR@K is undefined");
    double acc = 0.0;
    for (const auto& [cls, c] : per_class) acc += c.value();
    const double mr = acc / static_cast<double>(per_class.size());
    return {mr, (recall + mr) / 2.0};
}

struct VarianceStats {
    double intra = 0.0;  // mean over classes of mean squared distance to the class centroid
    double ratio = 0.0;  // intra / inter, inter over class centroids
};

// Compactness/distinctiveness of labeled representations. Intra-class
// variance is centroid-based; inter-class variance is the spread of class
// centroids around their own centroid.
inline VarianceStats iv_iivr(const std::vector<std::vector<double>>& reps,
                             const std::vector<std::int64_t>& labels) {
    if (reps.size() != labels.size())
        throw ShapeError("iv_iivr: " + std::to_string(reps.size()) + " representations vs " +
                         std::to_string(labels.size()) + " labels");
    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    if (by_class.size() < 2)
        throw ValidationError("iv_iivr: needs >= 2 classes, the ratio is undefined otherwise");
    const std::size_t dim = reps.at(0).size();

    auto sqdist = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double d = a[j] - b[j];
            acc += d * d;
        }
        return acc;
    };

    std::vector<std::vector<double>> centroids;
    double intra = 0.0;
    for (const auto& [cls, idx] : by_class) {
        std::vector<double> cen(dim, 0.0);
        for (auto i : idx)
            for (std::size_t j = 0; j < dim; ++j) cen[j] += reps[i][j];
        for (auto& v : cen) v /= static_cast<double>(idx.size());
        double var = 0.0;
        for (auto i : idx) var += sqdist(reps[i], cen);
        intra += var / static_cast<double>(idx.size());
        centroids.push_back(std::move(cen));
    }
    intra /= static_cast<double>(by_class.size());

    std::vector<double> global(dim, 0.0);
    for (const auto& c : centroids)
        for (std::size_t j = 0; j < dim; ++j) global[j] += c[j];
    for (auto& v : global) v /= static_cast<double>(centroids.size());
    double inter = 0.0;
    for (const auto& c : centroids) inter += sqdist(c, global);
    inter /= static_cast<double>(centroids.size());

    return {intra, intra / inter};
}

enum class PredictionHead { prototype, linear };

struct KMetrics {
    double recall = 0.0;
    double mean_recall = 0.0;
    double mean_of_both = 0.0;
    std::optional<double> zs_recall;
    std::map<std::int64_t, double> per_class;
};

struct EvalReport {
    std::vector<std::int64_t> ks;
    std::map<std::int64_t, KMetrics> at_k;
    double top1_accuracy = 0.0;  // over all pairs, background included
    double iv_entities = 0.0, iivr_entities = 0.0;
    double iv_relations = 0.0, iivr_relations = 0.0;
    std::int64_t pairs = 0, ground_truth = 0;
    std::vector<std::string> predicate_classes;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["ks"] = ks;
        j["top1_accuracy"] = top1_accuracy;
        j["iv_entities"] = iv_entities;
        j["iivr_entities"] = iivr_entities;
        j["iv_relations"] = iv_relations;
        j["iivr_relations"] = iivr_relations;
        j["pairs"] = pairs;
        j["ground_truth"] = ground_truth;
        j["predicate_classes"] = predicate_classes;
        j["at_k"] = nlohmann::json::object();
        for (const auto& [k, m] : at_k) {
            nlohmann::json mk;
            mk["recall"] = m.recall;
            mk["mean_recall"] = m.mean_recall;
            mk["mean_of_both"] = m.mean_of_both;
            if (m.zs_recall)
                mk["zs_recall"] = *m.zs_recall;
            else
                mk["zs_recall"] = nullptr;
            mk["per_class"] = nlohmann::json::object();
            for (const auto& [cls, r] : m.per_class) mk["per_class"][std::to_string(cls)] = r;
            j["at_k"][std::to_string(k)] = std::move(mk);
        }
        return j;
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.ks = j.at("ks").get<std::vector<std::int64_t>>();
        r.top1_accuracy = j.at("top1_accuracy").get<double>();
        r.iv_entities = j.at("iv_entities").get<double>();
        r.iivr_entities = j.at("iivr_entities").get<double>();
        r.iv_relations = j.at("iv_relations").get<double>();
        r.iivr_relations = j.at("iivr_relations").get<double>();
        r.pairs = j.at("pairs").get<std::int64_t>();
        r.ground_truth = j.at("ground_truth").get<std::int64_t>();
        r.predicate_classes = j.at("predicate_classes").get<std::vector<std::string>>();
        for (const auto& [ks, mj] : j.at("at_k").items()) {
            KMetrics m;
            m.recall = mj.at("recall").get<double>();
            m.mean_recall = mj.at("mean_recall").get<double>();
            m.mean_of_both = mj.at("mean_of_both").get<double>();
            if (!mj.at("zs_recall").is_null()) m.zs_recall = mj.at("zs_recall").get<double>();
            for (const auto& [cs, rv] : mj.at("per_class").items())
                m.per_class[std::stoll(cs)] = rv.get<double>();
            r.at_k[std::stoll(ks)] = std::move(m);
        }
        return r;
    }

    std::string table() const {
        std::ostringstream os;
        char buf[160];
        os << "pairs evaluated: " << pairs << "  (ground truth: " << ground_truth << ")\n";
        std::snprintf(buf, sizeof(buf), "top-1 accuracy: %.4f\n", top1_accuracy);
        os << buf;
        os << "  K      R@K    mR@K     M@K   zs-R@K\n";
        for (const auto& [k, m] : at_k) {
            std::snprintf(buf, sizeof(buf), "%3lld   %6.4f  %6.4f  %6.4f", (long long)k,
                          m.recall, m.mean_recall, m.mean_of_both);
            os << buf;
            if (m.zs_recall) {
                std::snprintf(buf, sizeof(buf), "   %6.4f\n", *m.zs_recall);
                os << buf;
            } else {
                os << "      n/a\n";
            }
        }
        std::snprintf(buf, sizeof(buf),
                      "IV entities: %.4f   IIVR entities: %.4f\n"
                      "IV relations: %.4f  IIVR relations: %.4f\n",
                      iv_entities, iivr_entities, iv_relations, iivr_relations);
        os << buf;
        os << "per-class recall";
        for (const auto& [k, m] : at_k) {
            os << " @" << k << ":";
            for (const auto& [cls, r] : m.per_class) {
                const auto& name = cls < static_cast<std::int64_t>(predicate_classes.size())
                                       ? predicate_classes[static_cast<std::size_t>(cls)]
                                       : std::to_string(cls);
                std::snprintf(buf, sizeof(buf), " %s=%.3f", name.c_str(), r);
                os << buf;
            }
            os << '\n';
        }
        return os.str();
    }
};

namespace metricdetail {

inline std::vector<double> row(const Tensor& t, std::int64_t r) {
    return std::vector<double>(t.data.begin() + r * t.shape[1],
                               t.data.begin() + (r + 1) * t.shape[1]);
}

inline Prediction predict_linear(const std::vector<double>& rel, const ModelParams& p) {
    const std::int64_t n = p.cfg.num_predicates + 1, d = p.cfg.semantic_dim;
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (std::int64_t c = 0; c < n; ++c) {
        double z = p.cls_b.at(c);
        for (std::int64_t j = 0; j < d; ++j) z += p.cls_w.at(c, j) * rel[static_cast<std::size_t>(j)];
        scores[static_cast<std::size_t>(c)] = z;
    }
    return from_scores(std::move(scores));
}

}  // namespace metricdetail

// Full evaluation of one split: forward every pair, apply the prediction
// head, compute recall metrics per K and the representation statistics.
inline EvalReport evaluate(ModelParams& params, const Dataset& ds,
                           const WordEmbeddingTable& emb, Split split,
                           const ZeroShotLedger* ledger = nullptr,
                           std::vector<std::int64_t> ks = {20, 50, 100},
                           PredictionHead head = PredictionHead::prototype) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].split == split) idx.push_back(static_cast<std::int64_t>(i));
    if (idx.empty()) throw ValidationError("evaluate: split has no samples");

    const Tensor t_pred = stack_predicate_embeddings(ds, emb);
    PairBatch batch = make_batch(ds, idx, emb);
    BatchOutputs out = run_forward(params, batch, t_pred);

    // group into scenes, preserving dataset order
    std::vector<Scene> scenes;
    std::int64_t last_scene = -1;
    bool first = true;
    std::vector<std::vector<double>> rel_reps, ent_reps;
    std::vector<std::int64_t> rel_labels, ent_labels;
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& smp = ds.samples[static_cast<std::size_t>(idx[i])];
        if (first || smp.scene_id != last_scene) {
            scenes.emplace_back();
            last_scene = smp.scene_id;
            first = false;
        }
        ScenePair sp;
        sp.subject_class = smp.subject_class;
        sp.object_class = smp.object_class;
        sp.predicate_class = smp.predicate_class;
        const auto rel = metricdetail::row(out.rel, static_cast<std::int64_t>(i));
        sp.pred = head == PredictionHead::prototype
                      ? predict(rel, out.protos, out.tau)
                      : metricdetail::predict_linear(rel, params);
        correct += sp.pred.cls == smp.predicate_class;
        if (smp.predicate_class != 0) {
            rel_reps.push_back(rel);
            rel_labels.push_back(smp.predicate_class);
        }
        ent_reps.push_back(metricdetail::row(out.subj, static_cast<std::int64_t>(i)));
        ent_labels.push_back(smp.subject_class);
        ent_reps.push_back(metricdetail::row(out.obj, static_cast<std::int64_t>(i)));
        ent_labels.push_back(smp.object_class);
        scenes.back().push_back(std::move(sp));
    }

    EvalReport report;
    report.ks = ks;
    report.pairs = static_cast<std::int64_t>(idx.size());
    report.predicate_classes = ds.predicate_classes;
    report.top1_accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
    for (auto k : ks) {
        const bool want_zs = ledger && !ledger->empty();
        RecallResult rr = recall_at_k(scenes, k, want_zs ? ledger : nullptr);
        KMetrics m;
        m.recall = rr.recall();
        auto [mr, mk] = mean_metrics(rr.per_class, m.recall);
        m.mean_recall = mr;
        m.mean_of_both = mk;
        if (rr.zero_shot && rr.zero_shot->total > 0) m.zs_recall = rr.zero_shot->value();
        for (const auto& [cls, c] : rr.per_class) m.per_class[cls] = c.value();
        report.ground_truth = rr.overall.total;
        report.at_k[k] = std::move(m);
    }

    const auto ent_stats = iv_iivr(ent_reps, ent_labels);
    report.iv_entities = ent_stats.intra;
    report.iivr_entities = ent_stats.ratio;
    std::map<std::int64_t, int> distinct;
    for (auto l : rel_labels) ++distinct[l];
    if (distinct.size() >= 2) {
        const auto rel_stats = iv_iivr(rel_reps, rel_labels);
        report.iv_relations = rel_stats.intra;
        report.iivr_relations = rel_stats.ratio;
    }
    return report;
}

// CSV export of all split representations plus the class prototypes, for
// external projection/visualization tooling.
//
// Columns: kind (entity|relation), branch (subject|object|predicate),
// label, is_prototype, v0..v{d-1}. Per pair: subject row, object row,
// relation row; then subject/object prototypes per entity class and one
// predicate prototype row per class.
inline void export_embeddings(ModelParams& params, const Dataset& ds,
                              const WordEmbeddingTable& emb, Split split,
                              const std::string& path) {
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].split == split) idx.push_back(static_cast<std::int64_t>(i));

    const Tensor t_pred = stack_predicate_embeddings(ds, emb);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write embeddings csv '" + path + "'");
    out << "kind,branch,label,is_prototype";
    for (std::int64_t j = 0; j < params.cfg.semantic_dim; ++j) out << ",v" << j;
    out << '\n';
    char buf[32];
    auto put_row = [&](const char* kind, const char* branch, const std::string& label,
                       int proto, const double* v) {
        out << kind << ',' << branch << ',' << label << ',' << proto;
        for (std::int64_t j = 0; j < params.cfg.semantic_dim; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", v[j]);
            out << ',' << buf;
        }
        out << '\n';
    };

    if (!idx.empty()) {
        PairBatch batch = make_batch(ds, idx, emb);
        BatchOutputs fwd = run_forward(params, batch, t_pred);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto& smp = ds.samples[static_cast<std::size_t>(idx[i])];
            const auto d = params.cfg.semantic_dim;
            put_row("entity", "subject",
                    ds.entity_classes[static_cast<std::size_t>(smp.subject_class)], 0,
                    fwd.subj.data.data() + static_cast<std::int64_t>(i) * d);
            put_row("entity", "object",
                    ds.entity_classes[static_cast<std::size_t>(smp.object_class)], 0,
                    fwd.obj.data.data() + static_cast<std::int64_t>(i) * d);
            put_row("relation", "predicate",
                    ds.predicate_classes[static_cast<std::size_t>(smp.predicate_class)], 0,
                    fwd.rel.data.data() + static_cast<std::int64_t>(i) * d);
        }
    }

    // prototypes: entity classes through both branches, then the predicate bank
    {
        Graph g;
        ParamVars pv = bind_params(g, params);
        Tensor t_ent = Tensor::zeros({ds.num_entity_classes(), emb.dim()});
        for (std::int64_t e = 0; e < ds.num_entity_classes(); ++e) {
            const auto v = emb.lookup(ds.entity_classes[static_cast<std::size_t>(e)]);
            std::copy(v.begin(), v.end(), t_ent.data.begin() + e * emb.dim());
        }
        const Tensor subj_protos = g.val(g.matmul(g.input(t_ent), g.transpose(pv.proj_subj)));
        const Tensor obj_protos = g.val(g.matmul(g.input(t_ent), g.transpose(pv.proj_obj)));
        const Tensor pred_protos = g.val(prototype_bank(g, pv, g.input(t_pred)));
        const auto d = params.cfg.semantic_dim;
        for (std::int64_t e = 0; e < ds.num_entity_classes(); ++e) {
            put_row("entity", "subject", ds.entity_classes[static_cast<std::size_t>(e)], 1,
                    subj_protos.data.data() + e * d);
            put_row("entity", "object", ds.entity_classes[static_cast<std::size_t>(e)], 1,
                    obj_protos.data.data() + e * d);
        }
        for (std::int64_t p = 0; p <= ds.num_predicate_classes(); ++p)
            put_row("relation", "predicate",
                    ds.predicate_classes[static_cast<std::size_t>(p)], 1,
                    pred_protos.data.data() + p * d);
    }
    if (!out) throw IoError("write failed on '" + path + "'");
}

}  // namespace protorel
