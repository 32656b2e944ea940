#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "protorel/errors.hpp"
#include "protorel/model.hpp"

namespace protorel {

inline constexpr const char* kCheckpointFormat = "protorel-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams params;
    nlohmann::json run_config;  // provenance: the full run configuration
    std::uint64_t seed = 0;
};

namespace detail_ckpt {

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {
        {"embedding_dim", c.embedding_dim}, {"visual_dim", c.visual_dim},
        {"union_dim", c.union_dim},         {"semantic_dim", c.semantic_dim},
        {"hidden_dim", c.hidden_dim},       {"num_predicates", c.num_predicates},
        {"tau_init", c.tau_init},           {"tau_min", c.tau_min},
        {"tau_max", c.tau_max},
    };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embedding_dim = j.at("embedding_dim").get<std::int64_t>();
    c.visual_dim = j.at("visual_dim").get<std::int64_t>();
    c.union_dim = j.at("union_dim").get<std::int64_t>();
    c.semantic_dim = j.at("semantic_dim").get<std::int64_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::int64_t>();
    c.num_predicates = j.at("num_predicates").get<std::int64_t>();
    c.tau_init = j.at("tau_init").get<double>();
    c.tau_min = j.at("tau_min").get<double>();
    c.tau_max = j.at("tau_max").get<double>();
    return c;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const std::string& path, ModelParams& params,
                            const nlohmann::json& run_config, std::uint64_t seed) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["seed"] = seed;
    j["model"] = detail_ckpt::model_config_json(params.cfg);
    j["run_config"] = run_config;
    auto tensors = nlohmann::json::array();
    for (auto& [name, t] : params.named()) {
        nlohmann::json tj;
        tj["name"] = name;
        tj["shape"] = t->shape;
        tj["data"] = t->data;
        tensors.push_back(std::move(tj));
    }
    j["tensors"] = std::move(tensors);

    namespace fs = std::filesystem;
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint '" + path + "'");
        out << j.dump() << '\n';
        if (!out) throw IoError("write failed on '" + path + "'");
    }
    fs::rename(tmp, target);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint '" + path + "': " + e.what());
    }
    if (!j.contains("format") || j.at("format") != kCheckpointFormat)
        throw FormatError("checkpoint '" + path + "': not a " + std::string(kCheckpointFormat) +
                          " file");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw FormatError("checkpoint '" + path + "': version " +
                          j.at("version").dump() + " unsupported, expected " +
                          std::to_string(kCheckpointVersion));

    Checkpoint ck;
    ck.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("run_config")) ck.run_config = j.at("run_config");
    try {
        ck.params.cfg = detail_ckpt::model_config_from_json(j.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint '" + path + "': bad model section: " + e.what());
    }
    ck.params.init(0);  // allocate shapes; data overwritten below

    std::size_t loaded = 0;
    auto named = ck.params.named();
    for (const auto& tj : j.at("tensors")) {
        const auto name = tj.at("name").get<std::string>();
        Tensor* target = nullptr;
        for (auto& [n, t] : named)
            if (n == name) target = t;
        if (!target) throw FormatError("checkpoint '" + path + "': unknown tensor '" + name + "'");
        const auto shape = tj.at("shape").get<Shape>();
        if (shape != target->shape)
            throw ShapeError("checkpoint '" + path + "': tensor '" + name + "' has shape " +
                             shape_str(shape) + ", model config implies " +
                             shape_str(target->shape));
        const auto data = tj.at("data").get<std::vector<double>>();
        if (data.size() != target->data.size())
            throw ShapeError("checkpoint '" + path + "': tensor '" + name + "' data length " +
                             std::to_string(data.size()) + " != " +
                             std::to_string(target->data.size()));
        target->data = data;
        target->zero_grad();
        ++loaded;
    }
    if (loaded != named.size())
        throw FormatError("checkpoint '" + path + "': has " + std::to_string(loaded) +
                          " tensors, model needs " + std::to_string(named.size()));
    return ck;
}

}  // namespace protorel
