#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "protorel/dataset.hpp"
#include "protorel/embeddings.hpp"
#include "protorel/errors.hpp"
#include "protorel/rng.hpp"

namespace protorel {

// Synthetic relation data: per-class signature vectors plus Gaussian noise,
// Zipf-shaped predicate frequencies, optional zero-shot triplet holdout.
struct SynthConfig {
    std::int64_t entity_classes = 10;     // E
    std::int64_t predicate_classes = 10;  // N, background excluded
    std::int64_t embedding_dim = 32;
    std::int64_t visual_dim = 48;
    std::int64_t union_dim = 48;
    std::int64_t scenes = 200;
    std::int64_t pairs_per_scene = 5;
    double zipf_exponent = 1.0;
    double noise = 0.1;                 // feature noise std
    double pair_signature_scale = 0.3;  // magnitude of the (subject, object) union term
    double zero_shot_fraction = 0.0;
    double background_ratio = 0.1;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    // Predicate overlap: with predicate_groups > 0, predicates share group
    // base vectors and only differ by scaled offsets, both in their word
    // embeddings (semantic_overlap) and in their union-feature signatures
    // (visual_overlap). Models families of near-synonymous relations.
    std::int64_t predicate_groups = 0;  // 0 = independent predicates
    double semantic_overlap = 0.3;      // word-embedding offset scale within a group
    double visual_overlap = 0.7;        // union-signature offset scale within a group

    void validate() const {
        if (entity_classes < 1) throw ConfigError("synth: entity_classes must be >= 1");
        if (predicate_classes < 1) throw ConfigError("synth: predicate_classes must be >= 1");
        if (scenes < 1) throw ConfigError("synth: scenes must be >= 1");
        if (pairs_per_scene < 1) throw ConfigError("synth: pairs_per_scene must be >= 1");
        if (embedding_dim < 1 || visual_dim < 1 || union_dim < 1)
            throw ConfigError("synth: dimensions must be >= 1");
        if (noise < 0) throw ConfigError("synth: noise must be >= 0");
        if (zero_shot_fraction < 0 || zero_shot_fraction >= 1)
            throw ConfigError("synth: zero_shot_fraction must be in [0,1)");
        if (background_ratio < 0 || background_ratio >= 1)
            throw ConfigError("synth: background_ratio must be in [0,1)");
        if (train_fraction <= 0 || val_fraction < 0 || train_fraction + val_fraction >= 1)
            throw ConfigError("synth: train/val fractions must leave room for a test split");
        if (predicate_groups < 0 || predicate_groups > predicate_classes)
            throw ConfigError("synth: predicate_groups must be in 0..predicate_classes");
        if (semantic_overlap < 0 || visual_overlap < 0)
            throw ConfigError("synth: overlap scales must be >= 0");
    }
};

struct SynthResult {
    Dataset dataset;
    WordEmbeddingTable embeddings;
    ZeroShotLedger ledger;
};

namespace detail {

// Deterministic per-(subject, object) union signature, independent of draw
// order.
inline std::vector<double> pair_signature(std::uint64_t seed, std::int64_t s, std::int64_t o,
                                          std::int64_t dim) {
    Rng rng(derive_seed(derive_seed(seed, 7),
                        static_cast<std::uint64_t>(s) * 0x100003ULL + static_cast<std::uint64_t>(o)));
    return rng.gaussian_vec(dim);
}

// Zipf quotas over ranks 1..N summing to total, non-increasing by
// construction (largest-remainder seats are re-sorted descending).
inline std::vector<std::int64_t> zipf_quotas(std::int64_t n_classes, double exponent,
                                             std::int64_t total) {
    std::vector<double> w(static_cast<std::size_t>(n_classes));
    double sum = 0.0;
    for (std::int64_t k = 0; k < n_classes; ++k) {
        w[static_cast<std::size_t>(k)] = std::pow(static_cast<double>(k + 1), -exponent);
        sum += w[static_cast<std::size_t>(k)];
    }
    std::vector<std::int64_t> quota(static_cast<std::size_t>(n_classes));
    std::vector<std::pair<double, std::int64_t>> rema;
    std::int64_t assigned = 0;
    for (std::int64_t k = 0; k < n_classes; ++k) {
        const double exact = static_cast<double>(total) * w[static_cast<std::size_t>(k)] / sum;
        quota[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(std::floor(exact));
        assigned += quota[static_cast<std::size_t>(k)];
        rema.push_back({exact - std::floor(exact), k});
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::int64_t i = 0; i < total - assigned; ++i)
        ++quota[static_cast<std::size_t>(rema[static_cast<std::size_t>(i) % rema.size()].second)];
    std::sort(quota.begin(), quota.end(), std::greater<>());
    return quota;
}

}  // namespace detail

inline SynthResult gen_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::int64_t E = cfg.entity_classes;
    const std::int64_t N = cfg.predicate_classes;

    SynthResult res;
    Dataset& ds = res.dataset;
    for (std::int64_t e = 0; e < E; ++e) ds.entity_classes.push_back("obj_" + std::to_string(e));
    ds.predicate_classes.push_back("background");
    for (std::int64_t p = 1; p <= N; ++p) ds.predicate_classes.push_back("rel_" + std::to_string(p));
    ds.visual_dim = cfg.visual_dim;
    ds.union_dim = cfg.union_dim;

    // predicate p (1-based) -> overlap group, round-robin so every group
    // spans head and tail frequency ranks
    auto group_of = [&](std::int64_t p) { return (p - 1) % std::max<std::int64_t>(cfg.predicate_groups, 1); };

    // word embeddings: one unit vector per class label; grouped predicates
    // share a base direction and differ by a scaled offset
    res.embeddings = WordEmbeddingTable(cfg.embedding_dim);
    {
        Rng rng(derive_seed(seed, 1));
        for (const auto& label : ds.entity_classes)
            res.embeddings.insert(label, rng.unit_vector(cfg.embedding_dim));
        if (cfg.predicate_groups == 0) {
            for (const auto& label : ds.predicate_classes)
                res.embeddings.insert(label, rng.unit_vector(cfg.embedding_dim));
        } else {
            res.embeddings.insert(ds.predicate_classes[0], rng.unit_vector(cfg.embedding_dim));
            std::vector<std::vector<double>> centers;
            for (std::int64_t gi = 0; gi < cfg.predicate_groups; ++gi)
                centers.push_back(rng.unit_vector(cfg.embedding_dim));
            for (std::int64_t p = 1; p <= N; ++p) {
                auto v = rng.unit_vector(cfg.embedding_dim);
                const auto& c = centers[static_cast<std::size_t>(group_of(p))];
                double norm = 0.0;
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = c[i] + cfg.semantic_overlap * v[i];
                    norm += v[i] * v[i];
                }
                norm = std::sqrt(norm);
                for (auto& x : v) x /= norm;
                res.embeddings.insert(ds.predicate_classes[static_cast<std::size_t>(p)],
                                      std::move(v));
            }
        }
    }

    // per-class feature signatures; grouped predicates share a base union
    // signature with scaled per-class offsets
    std::vector<std::vector<double>> entity_sig;
    std::vector<std::vector<double>> predicate_sig;
    {
        Rng rng(derive_seed(seed, 2));
        for (std::int64_t e = 0; e < E; ++e) entity_sig.push_back(rng.gaussian_vec(cfg.visual_dim));
        if (cfg.predicate_groups == 0) {
            for (std::int64_t p = 0; p <= N; ++p)
                predicate_sig.push_back(rng.gaussian_vec(cfg.union_dim));
        } else {
            predicate_sig.push_back(rng.gaussian_vec(cfg.union_dim));  // background
            std::vector<std::vector<double>> centers;
            for (std::int64_t gi = 0; gi < cfg.predicate_groups; ++gi)
                centers.push_back(rng.gaussian_vec(cfg.union_dim));
            for (std::int64_t p = 1; p <= N; ++p) {
                auto v = rng.gaussian_vec(cfg.union_dim, cfg.visual_overlap);
                const auto& c = centers[static_cast<std::size_t>(group_of(p))];
                for (std::size_t i = 0; i < v.size(); ++i) v[i] += c[i];
                predicate_sig.push_back(std::move(v));
            }
        }
    }

    // scene split assignment
    std::vector<Split> scene_split(static_cast<std::size_t>(cfg.scenes), Split::test);
    {
        const auto n_train = static_cast<std::int64_t>(
            std::llround(cfg.train_fraction * static_cast<double>(cfg.scenes)));
        const auto n_val = static_cast<std::int64_t>(
            std::llround(cfg.val_fraction * static_cast<double>(cfg.scenes)));
        for (std::int64_t i = 0; i < cfg.scenes; ++i)
            scene_split[static_cast<std::size_t>(i)] =
                i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        Rng rng(derive_seed(seed, 3));
        rng.shuffle(scene_split);
    }

    // predicate ids: background quota + Zipf quotas over 1..N, shuffled over
    // all pair slots
    const std::int64_t total = cfg.scenes * cfg.pairs_per_scene;
    std::vector<std::int64_t> pred_of_pair;
    {
        const auto n_bg = static_cast<std::int64_t>(
            std::llround(cfg.background_ratio * static_cast<double>(total)));
        pred_of_pair.assign(static_cast<std::size_t>(n_bg), 0);
        const auto quotas = detail::zipf_quotas(N, cfg.zipf_exponent, total - n_bg);
        for (std::int64_t k = 0; k < N; ++k)
            pred_of_pair.insert(pred_of_pair.end(), static_cast<std::size_t>(quotas[static_cast<std::size_t>(k)]),
                                k + 1);
        Rng rng(derive_seed(seed, 4));
        rng.shuffle(pred_of_pair);
    }

    // assemble samples scene by scene: classes first, features later
    {
        Rng rng(derive_seed(seed, 5));
        std::size_t slot = 0;
        for (std::int64_t sc = 0; sc < cfg.scenes; ++sc) {
            for (std::int64_t p = 0; p < cfg.pairs_per_scene; ++p, ++slot) {
                RelationSample s;
                s.scene_id = sc;
                s.split = scene_split[static_cast<std::size_t>(sc)];
                s.predicate_class = pred_of_pair[slot];
                s.subject_class = rng.below(E);
                s.object_class = rng.below(E);
                ds.samples.push_back(std::move(s));
            }
        }
    }

    // zero-shot holdout: withhold a fraction of the foreground triplet types
    // from train; the withheld types must appear in test
    if (cfg.zero_shot_fraction > 0) {
        const auto all_types = ds.triplet_types(Split::train);
        auto union_types = all_types;
        for (const auto& t : ds.triplet_types(Split::val)) union_types.insert(t);
        for (const auto& t : ds.triplet_types(Split::test)) union_types.insert(t);
        const auto target = static_cast<std::int64_t>(std::llround(
            cfg.zero_shot_fraction * static_cast<double>(union_types.size())));

        std::vector<TripletType> candidates;
        for (const auto& t : ds.triplet_types(Split::test)) candidates.push_back(t);
        Rng rng(derive_seed(seed, 6));
        rng.shuffle(candidates);
        for (std::int64_t i = 0;
             i < target && i < static_cast<std::int64_t>(candidates.size()); ++i)
            res.ledger.triplets.insert(candidates[static_cast<std::size_t>(i)]);

        // purge: re-roll (subject, object) of offending train samples
        for (auto& s : ds.samples) {
            if (s.split != Split::train || s.predicate_class == 0) continue;
            int guard = 0;
            while (res.ledger.contains(s.subject_class, s.object_class, s.predicate_class)) {
                s.subject_class = rng.below(E);
                s.object_class = rng.below(E);
                if (++guard > 100000)
                    throw ConfigError("synth: zero_shot_fraction leaves no admissible pairs");
            }
        }
    }

    // features: class signature + optional pair signature + Gaussian noise
    {
        Rng rng(derive_seed(seed, 8));
        for (auto& s : ds.samples) {
            const auto& as = entity_sig[static_cast<std::size_t>(s.subject_class)];
            const auto& ao = entity_sig[static_cast<std::size_t>(s.object_class)];
            const auto& bp = predicate_sig[static_cast<std::size_t>(s.predicate_class)];
            s.x_subject.resize(as.size());
            s.x_object.resize(ao.size());
            s.x_union.resize(bp.size());
            for (std::size_t i = 0; i < as.size(); ++i)
                s.x_subject[i] = as[i] + cfg.noise * rng.gaussian();
            for (std::size_t i = 0; i < ao.size(); ++i)
                s.x_object[i] = ao[i] + cfg.noise * rng.gaussian();
            const auto pair_sig =
                detail::pair_signature(seed, s.subject_class, s.object_class, cfg.union_dim);
            for (std::size_t i = 0; i < bp.size(); ++i)
                s.x_union[i] = bp[i] + cfg.pair_signature_scale * pair_sig[i] +
                               cfg.noise * rng.gaussian();
        }
    }

    ds.validate();
    return res;
}

}  // namespace protorel
