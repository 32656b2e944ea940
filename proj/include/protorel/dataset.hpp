#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "protorel/errors.hpp"

namespace protorel {

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw FormatError("unknown split tag '" + s + "'");
}

// One annotated subject-object pair with its precomputed visual features.
// predicate_class 0 is the background (no annotated relation).
struct RelationSample {
    std::int64_t scene_id = 0;
    std::int64_t subject_class = 0;
    std::int64_t object_class = 0;
    std::int64_t predicate_class = 0;
    Split split = Split::train;
    std::vector<double> x_subject;
    std::vector<double> x_object;
    std::vector<double> x_union;

    bool operator==(const RelationSample&) const = default;
};

using TripletType = std::tuple<std::int64_t, std::int64_t, std::int64_t>;  // (s_cls, o_cls, p_cls)

// Triplet types absent from the train split but present in test.
struct ZeroShotLedger {
    std::set<TripletType> triplets;

    bool contains(std::int64_t s, std::int64_t o, std::int64_t p) const {
        return triplets.count({s, o, p}) > 0;
    }
    bool empty() const { return triplets.empty(); }
    std::size_t size() const { return triplets.size(); }

    bool operator==(const ZeroShotLedger&) const = default;
};

struct Dataset {
    std::vector<RelationSample> samples;
    std::vector<std::string> entity_classes;
    std::vector<std::string> predicate_classes;  // index 0 is the background label
    std::int64_t visual_dim = 0;
    std::int64_t union_dim = 0;

    // N: number of real predicate classes, excluding background.
    std::int64_t num_predicate_classes() const {
        return static_cast<std::int64_t>(predicate_classes.size()) - 1;
    }
    std::int64_t num_entity_classes() const {
        return static_cast<std::int64_t>(entity_classes.size());
    }

    std::vector<const RelationSample*> split_samples(Split s) const {
        std::vector<const RelationSample*> out;
        for (const auto& smp : samples)
            if (smp.split == s) out.push_back(&smp);
        return out;
    }

    std::set<TripletType> triplet_types(Split s, bool foreground_only = true) const {
        std::set<TripletType> out;
        for (const auto& smp : samples)
            if (smp.split == s && (!foreground_only || smp.predicate_class != 0))
                out.insert({smp.subject_class, smp.object_class, smp.predicate_class});
        return out;
    }

    void validate() const {
        const auto E = num_entity_classes();
        const auto N = num_predicate_classes();
        if (E < 1) throw ValidationError("dataset has no entity classes");
        if (N < 0) throw ValidationError("dataset has no predicate classes");
        std::set<std::int64_t> closed_scenes;
        std::int64_t current = -1;
        bool first = true;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            const std::string where = "sample " + std::to_string(i);
            if (s.subject_class < 0 || s.subject_class >= E)
                throw ValidationError(where + ": unknown subject class id " +
                                      std::to_string(s.subject_class));
            if (s.object_class < 0 || s.object_class >= E)
                throw ValidationError(where + ": unknown object class id " +
                                      std::to_string(s.object_class));
            if (s.predicate_class < 0 || s.predicate_class > N)
                throw ValidationError(where + ": predicate class id " +
                                      std::to_string(s.predicate_class) + " outside 0.." +
                                      std::to_string(N));
            if (static_cast<std::int64_t>(s.x_subject.size()) != visual_dim ||
                static_cast<std::int64_t>(s.x_object.size()) != visual_dim)
                throw FormatError(where + ": entity feature width " +
                                  std::to_string(s.x_subject.size()) + "/" +
                                  std::to_string(s.x_object.size()) + " != visual_dim " +
                                  std::to_string(visual_dim));
            if (static_cast<std::int64_t>(s.x_union.size()) != union_dim)
                throw FormatError(where + ": union feature width " +
                                  std::to_string(s.x_union.size()) + " != union_dim " +
                                  std::to_string(union_dim));
            if (first || s.scene_id != current) {
                if (closed_scenes.count(s.scene_id))
                    throw ValidationError(where + ": scene " + std::to_string(s.scene_id) +
                                          " is not contiguous");
                if (!first) closed_scenes.insert(current);
                current = s.scene_id;
                first = false;
            }
        }
    }

    bool operator==(const Dataset&) const = default;
};

namespace detail {

inline void append_reals(std::string& out, const std::vector<double>& v) {
    char buf[32];
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        out += buf;
    }
    out += ']';
}

inline std::vector<double> read_reals(const nlohmann::json& j, const char* key,
                                      const std::string& where) {
    if (!j.contains(key) || !j.at(key).is_array())
        throw FormatError(where + ": missing array field '" + key + "'");
    std::vector<double> out;
    out.reserve(j.at(key).size());
    for (const auto& x : j.at(key)) {
        if (!x.is_number()) throw FormatError(where + ": non-numeric entry in '" + key + "'");
        out.push_back(x.get<double>());
    }
    return out;
}

}  // namespace detail

// Dataset file: JSON Lines. Line 1 is a header object
//   {"entity_classes":[...],"predicate_classes":[...],"visual_dim":D,"union_dim":U}
// and each following line is one sample
//   {"scene":i,"s_cls":a,"o_cls":b,"p_cls":p,"split":"train","xs":[...],"xo":[...],"xu":[...]}
// with reals written as decimal with 17 significant digits so values survive
// a round trip losslessly.
inline void export_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write dataset file '" + path + "'");
        nlohmann::json header;
        header["entity_classes"] = ds.entity_classes;
        header["predicate_classes"] = ds.predicate_classes;
        header["visual_dim"] = ds.visual_dim;
        header["union_dim"] = ds.union_dim;
        out << header.dump() << '\n';
        std::string line;
        for (const auto& s : ds.samples) {
            line.clear();
            line += "{\"scene\":" + std::to_string(s.scene_id);
            line += ",\"s_cls\":" + std::to_string(s.subject_class);
            line += ",\"o_cls\":" + std::to_string(s.object_class);
            line += ",\"p_cls\":" + std::to_string(s.predicate_class);
            line += ",\"split\":\"";
            line += split_name(s.split);
            line += "\",\"xs\":";
            detail::append_reals(line, s.x_subject);
            line += ",\"xo\":";
            detail::append_reals(line, s.x_object);
            line += ",\"xu\":";
            detail::append_reals(line, s.x_union);
            line += '}';
            out << line << '\n';
        }
        if (!out) throw IoError("write failed on '" + path + "'");
    }
    fs::rename(tmp, target);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("dataset file '" + path + "' is empty");

    Dataset ds;
    try {
        const auto header = nlohmann::json::parse(line);
        ds.entity_classes = header.at("entity_classes").get<std::vector<std::string>>();
        ds.predicate_classes = header.at("predicate_classes").get<std::vector<std::string>>();
        ds.visual_dim = header.at("visual_dim").get<std::int64_t>();
        ds.union_dim = header.at("union_dim").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset header: ") + e.what());
    }

    std::int64_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "dataset line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        RelationSample s;
        try {
            s.scene_id = j.at("scene").get<std::int64_t>();
            s.subject_class = j.at("s_cls").get<std::int64_t>();
            s.object_class = j.at("o_cls").get<std::int64_t>();
            s.predicate_class = j.at("p_cls").get<std::int64_t>();
            s.split = parse_split(j.at("split").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        s.x_subject = detail::read_reals(j, "xs", where);
        s.x_object = detail::read_reals(j, "xo", where);
        s.x_union = detail::read_reals(j, "xu", where);
        ds.samples.push_back(std::move(s));
    }
    ds.validate();
    return ds;
}

inline void save_ledger(const ZeroShotLedger& ledger, const std::string& path) {
    nlohmann::json j;
    j["triplets"] = nlohmann::json::array();
    for (const auto& [s, o, p] : ledger.triplets) j["triplets"].push_back({s, o, p});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write ledger file '" + path + "'");
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed on '" + path + "'");
}

inline ZeroShotLedger load_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ledger file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("ledger: ") + e.what());
    }
    ZeroShotLedger ledger;
    for (const auto& t : j.at("triplets")) {
        if (!t.is_array() || t.size() != 3) throw FormatError("ledger: malformed triplet entry");
        ledger.triplets.insert({t[0].get<std::int64_t>(), t[1].get<std::int64_t>(),
                                t[2].get<std::int64_t>()});
    }
    return ledger;
}

}  // namespace protorel
