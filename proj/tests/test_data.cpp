#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "helpers.hpp"
#include "protorel/dataset.hpp"
#include "protorel/embeddings.hpp"
#include "protorel/synthetic.hpp"

using namespace protorel;
using testutil::TempDir;

TEST_CASE("embedding file parsing", "[data]") {
    TempDir dir;
    SECTION("well-formed records parse") {
        testutil::write_file(dir.file("emb.txt"), "man 0.1 0.2\nhorse -1 2.5\n");
        auto table = load_embeddings(dir.file("emb.txt"), 2);
        CHECK(table.size() == 2);
        CHECK(table.at("man") == std::vector<double>{0.1, 0.2});
        CHECK(table.at("horse") == std::vector<double>{-1.0, 2.5});
    }
    SECTION("dimension mismatch cites the line") {
        testutil::write_file(dir.file("emb.txt"), "man 0.1 0.2\nshort 0.1\n");
        try {
            load_embeddings(dir.file("emb.txt"), 2);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SECTION("duplicate label is rejected") {
        testutil::write_file(dir.file("emb.txt"), "man 0.1 0.2\nman 0.3 0.4\n");
        CHECK_THROWS_AS(load_embeddings(dir.file("emb.txt"), 2), FormatError);
    }
    SECTION("empty file gives empty table, lookup fails later") {
        testutil::write_file(dir.file("emb.txt"), "");
        auto table = load_embeddings(dir.file("emb.txt"), 2);
        CHECK(table.empty());
        CHECK_THROWS_AS(table.at("man"), LookupError);
    }
    SECTION("multi-token labels resolve to the token mean") {
        testutil::write_file(dir.file("emb.txt"), "standing 1 0\non 0 1\n");
        auto table = load_embeddings(dir.file("emb.txt"), 2);
        CHECK(table.lookup("standing on") == std::vector<double>{0.5, 0.5});
        CHECK_THROWS_AS(table.lookup("lying on"), LookupError);
    }
    SECTION("save/load round trip is exact") {
        WordEmbeddingTable t(3);
        t.insert("a", {0.1, -2.0 / 3.0, 1e-17});
        t.insert("b", {1.0, 2.0, 3.0});
        save_embeddings(t, dir.file("emb.txt"));
        auto back = load_embeddings(dir.file("emb.txt"), 3);
        CHECK(back.entries() == t.entries());
    }
}

namespace {

Dataset tiny_dataset() {
    Dataset ds;
    ds.entity_classes = {"cat", "mat"};
    ds.predicate_classes = {"background", "on"};
    ds.visual_dim = 2;
    ds.union_dim = 3;
    RelationSample s;
    s.scene_id = 0;
    s.subject_class = 0;
    s.object_class = 1;
    s.predicate_class = 1;
    s.split = Split::test;
    s.x_subject = {0.25, -1.0};
    s.x_object = {2.0, 0.125};
    s.x_union = {1.0 / 3.0, 0.0, -5.5};
    ds.samples.push_back(s);
    return ds;
}

}  // namespace

TEST_CASE("dataset files", "[data]") {
    TempDir dir;
    SECTION("one-sample round trip") {
        Dataset ds = tiny_dataset();
        export_dataset(ds, dir.file("d.jsonl"));
        Dataset back = load_dataset(dir.file("d.jsonl"));
        CHECK(back.samples.size() == 1);
        CHECK(back == ds);
    }
    SECTION("out-of-range predicate id fails validation") {
        Dataset ds = tiny_dataset();
        ds.samples[0].predicate_class = 4;  // N + 3 with N = 1
        CHECK_THROWS_AS(ds.validate(), ValidationError);
        // and via the file path too
        ds.samples[0].predicate_class = 1;
        export_dataset(ds, dir.file("d.jsonl"));
        auto text = testutil::read_file(dir.file("d.jsonl"));
        auto pos = text.find("\"p_cls\":1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 9, "\"p_cls\":4");
        testutil::write_file(dir.file("bad.jsonl"), text);
        CHECK_THROWS_AS(load_dataset(dir.file("bad.jsonl")), ValidationError);
    }
    SECTION("ragged feature width is a format error") {
        Dataset ds = tiny_dataset();
        ds.samples[0].x_union = {1.0, 2.0};  // header says 3
        CHECK_THROWS_AS(export_dataset(ds, dir.file("d.jsonl")), FormatError);
    }
    SECTION("empty dataset is a valid header-only file") {
        Dataset ds = tiny_dataset();
        ds.samples.clear();
        export_dataset(ds, dir.file("d.jsonl"));
        Dataset back = load_dataset(dir.file("d.jsonl"));
        CHECK(back.samples.empty());
        CHECK(back == ds);
    }
    SECTION("export overwrites an existing file") {
        testutil::write_file(dir.file("d.jsonl"), "stale content\n");
        Dataset ds = tiny_dataset();
        export_dataset(ds, dir.file("d.jsonl"));
        CHECK(load_dataset(dir.file("d.jsonl")) == ds);
    }
    SECTION("non-contiguous scenes fail validation") {
        Dataset ds = tiny_dataset();
        auto a = ds.samples[0];
        auto b = a;
        b.scene_id = 1;
        ds.samples = {a, b, a};
        CHECK_THROWS_AS(ds.validate(), ValidationError);
    }
}

TEST_CASE("synthetic generation", "[data]") {
    SECTION("deterministic in the seed, bitwise") {
        SynthConfig cfg;
        cfg.scenes = 20;
        cfg.zero_shot_fraction = 0.1;
        auto a = gen_synthetic(cfg, 99);
        auto b = gen_synthetic(cfg, 99);
        CHECK(a.dataset == b.dataset);
        CHECK(a.ledger == b.ledger);
        CHECK(a.embeddings.entries() == b.embeddings.entries());
        auto c = gen_synthetic(cfg, 100);
        CHECK_FALSE(a.dataset == c.dataset);
    }
    SECTION("zero_shot_fraction = 0 gives an empty ledger") {
        SynthConfig cfg;
        cfg.scenes = 10;
        cfg.zero_shot_fraction = 0.0;
        CHECK(gen_synthetic(cfg, 1).ledger.empty());
    }
    SECTION("ledger triplets never occur in the train split") {
        SynthConfig cfg;
        cfg.entity_classes = 5;
        cfg.predicate_classes = 10;
        cfg.scenes = 200;
        cfg.zero_shot_fraction = 0.1;
        auto res = gen_synthetic(cfg, 7);
        REQUIRE(!res.ledger.empty());
        auto train_types = res.dataset.triplet_types(Split::train);
        auto test_types = res.dataset.triplet_types(Split::test);
        for (const auto& t : res.ledger.triplets) {
            CHECK(train_types.count(t) == 0);
            CHECK(test_types.count(t) == 1);
        }
    }
    SECTION("zero scenes or classes is a config error") {
        SynthConfig cfg;
        cfg.scenes = 0;
        CHECK_THROWS_AS(gen_synthetic(cfg, 1), ConfigError);
        cfg.scenes = 10;
        cfg.entity_classes = 0;
        CHECK_THROWS_AS(gen_synthetic(cfg, 1), ConfigError);
    }
    SECTION("rank-frequency of predicates is non-increasing") {
        SynthConfig cfg;
        cfg.scenes = 137;
        cfg.pairs_per_scene = 7;
        cfg.zipf_exponent = 1.5;
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            auto res = gen_synthetic(cfg, seed);
            std::map<std::int64_t, std::int64_t> counts;
            for (const auto& s : res.dataset.samples)
                if (s.predicate_class != 0) ++counts[s.predicate_class];
            std::int64_t prev = counts[1];
            for (std::int64_t p = 2; p <= cfg.predicate_classes; ++p) {
                CHECK(counts[p] <= prev);
                prev = counts[p];
            }
        }
    }
    SECTION("round trip through files reproduces the generator output") {
        TempDir dir;
        SynthConfig cfg;
        cfg.scenes = 25;
        cfg.pairs_per_scene = 3;
        cfg.zero_shot_fraction = 0.2;
        for (std::uint64_t seed : {5u, 17u}) {
            auto res = gen_synthetic(cfg, seed);
            export_dataset(res.dataset, dir.file("d.jsonl"));
            save_embeddings(res.embeddings, dir.file("e.txt"));
            save_ledger(res.ledger, dir.file("l.json"));
            CHECK(load_dataset(dir.file("d.jsonl")) == res.dataset);
            CHECK(load_embeddings(dir.file("e.txt"), cfg.embedding_dim).entries() ==
                  res.embeddings.entries());
            CHECK(load_ledger(dir.file("l.json")) == res.ledger);
        }
    }
    SECTION("every class label resolves in the embedding table") {
        SynthConfig cfg;
        cfg.scenes = 5;
        auto res = gen_synthetic(cfg, 3);
        for (const auto& l : res.dataset.entity_classes) CHECK(res.embeddings.contains(l));
        for (const auto& l : res.dataset.predicate_classes) CHECK(res.embeddings.contains(l));
    }
}
