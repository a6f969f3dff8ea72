#pragma once

// Checkpoint format: a single JSON document holding the model shape, the
// pipeline settings, and every named parameter tensor.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "refineppi/pdc_net.hpp"
#include "refineppi/pipeline.hpp"

namespace refineppi {

inline constexpr const char* kCheckpointFormat = "refine-ppi-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace ckpt_detail {

inline std::string formula_name(DistanceFormula f) {
    return f == DistanceFormula::Standard ? "standard" : "linear-trace";
}

inline DistanceFormula formula_of(const std::string& s) {
    if (s == "standard") return DistanceFormula::Standard;
    if (s == "linear-trace") return DistanceFormula::LinearTrace;
    throw std::invalid_argument("checkpoint: unknown distance formula '" + s + "'");
}

inline std::string rule_name(VarianceRule r) {
    return r == VarianceRule::Additive ? "additive" : "blend";
}

inline VarianceRule rule_of(const std::string& s) {
    if (s == "additive") return VarianceRule::Additive;
    if (s == "blend") return VarianceRule::Blend;
    throw std::invalid_argument("checkpoint: unknown variance rule '" + s + "'");
}

inline std::string corruption_name(const CorruptionMode& m) {
    return m.kind == CorruptionKind::Noise ? "noise" : "interpolate";
}

inline CorruptionMode corruption_of(const std::string& s, double alpha) {
    if (s == "noise") return CorruptionMode::noise(alpha);
    if (s == "interpolate") return CorruptionMode::interpolate();
    throw std::invalid_argument("checkpoint: unknown corruption mode '" + s + "'");
}

inline std::string variance_kind_name(VarianceInit::Kind k) {
    switch (k) {
        case VarianceInit::Kind::Identity: return "identity";
        case VarianceInit::Kind::FromRmsf: return "rmsf";
        case VarianceInit::Kind::Learnable: return "learnable";
    }
    throw std::logic_error("checkpoint: bad variance kind");
}

inline VarianceInit::Kind variance_kind_of(const std::string& s) {
    if (s == "identity") return VarianceInit::Kind::Identity;
    if (s == "rmsf") return VarianceInit::Kind::FromRmsf;
    if (s == "learnable") return VarianceInit::Kind::Learnable;
    throw std::invalid_argument("checkpoint: unknown variance init '" + s + "'");
}

}  // namespace ckpt_detail

inline nlohmann::json model_config_json(const ModelConfig& cfg) {
    return {{"node_width", cfg.node_width},
            {"encoder_layers", cfg.encoder_layers},
            {"refiner_layers", cfg.refiner_layers},
            {"knn_k", cfg.knn_k},
            {"distance_formula", ckpt_detail::formula_name(cfg.formula)},
            {"variance_rule", ckpt_detail::rule_name(cfg.variance_rule)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.node_width = j.at("node_width").get<int>();
    cfg.encoder_layers = j.at("encoder_layers").get<int>();
    cfg.refiner_layers = j.at("refiner_layers").get<int>();
    cfg.knn_k = j.at("knn_k").get<int>();
    cfg.formula = ckpt_detail::formula_of(j.at("distance_formula").get<std::string>());
    cfg.variance_rule = ckpt_detail::rule_of(j.at("variance_rule").get<std::string>());
    cfg.embedding_dim();  // validates node_width
    return cfg;
}

inline nlohmann::json pipeline_config_json(const PipelineConfig& cfg) {
    return {{"k_recycles", cfg.k_recycles},
            {"lambda", cfg.lambda},
            {"mask_left", cfg.mask_left},
            {"mask_right", cfg.mask_right},
            {"corruption", ckpt_detail::corruption_name(cfg.corruption)},
            {"noise_alpha", cfg.corruption.alpha},
            {"variance_init", ckpt_detail::variance_kind_name(cfg.variance_kind)},
            {"huber_delta", cfg.huber_delta},
            {"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"max_iterations", cfg.max_iterations},
            {"val_every", cfg.val_every},
            {"plateau_patience", cfg.plateau_patience},
            {"lr_decay", cfg.lr_decay},
            {"min_lr", cfg.min_lr},
            {"seed", cfg.seed}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    if (j.contains("k_recycles")) cfg.k_recycles = j.at("k_recycles").get<int>();
    if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
    if (j.contains("mask_left")) cfg.mask_left = j.at("mask_left").get<int>();
    if (j.contains("mask_right")) cfg.mask_right = j.at("mask_right").get<int>();
    double alpha = j.contains("noise_alpha") ? j.at("noise_alpha").get<double>() : 0.5;
    if (j.contains("corruption"))
        cfg.corruption = ckpt_detail::corruption_of(j.at("corruption").get<std::string>(), alpha);
    if (j.contains("variance_init"))
        cfg.variance_kind = ckpt_detail::variance_kind_of(j.at("variance_init").get<std::string>());
    if (j.contains("huber_delta")) cfg.huber_delta = j.at("huber_delta").get<double>();
    if (j.contains("lr")) cfg.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_iterations")) cfg.max_iterations = j.at("max_iterations").get<int>();
    if (j.contains("val_every")) cfg.val_every = j.at("val_every").get<int>();
    if (j.contains("plateau_patience")) cfg.plateau_patience = j.at("plateau_patience").get<int>();
    if (j.contains("lr_decay")) cfg.lr_decay = j.at("lr_decay").get<double>();
    if (j.contains("min_lr")) cfg.min_lr = j.at("min_lr").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

inline nlohmann::json checkpoint_json(const ModelParams& params, const PipelineConfig& pipeline) {
    nlohmann::json doc;
    doc["format"] = kCheckpointFormat;
    doc["version"] = kCheckpointVersion;
    doc["model"] = model_config_json(params.cfg);
    doc["pipeline"] = pipeline_config_json(pipeline);
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& [name, t] : params.store.params) {
        nlohmann::json entry;
        entry["shape"] = t.shape();
        entry["values"] = t.values();
        tensors[name] = std::move(entry);
    }
    doc["params"] = std::move(tensors);
    return doc;
}

struct Checkpoint {
    ModelParams params;
    PipelineConfig pipeline;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
    if (!doc.contains("format") || doc.at("format").get<std::string>() != kCheckpointFormat)
        throw std::invalid_argument("checkpoint: missing or unexpected format tag");
    if (doc.at("version").get<int>() != kCheckpointVersion)
        throw std::invalid_argument("checkpoint: unsupported version");
    Checkpoint out;
    ModelConfig mcfg = model_config_from_json(doc.at("model"));
    out.params = ModelParams::init(mcfg, 0);
    out.pipeline = pipeline_config_from_json(doc.at("pipeline"));
    const nlohmann::json& tensors = doc.at("params");
    for (auto& [name, t] : out.params.store.params) {
        if (!tensors.contains(name))
            throw std::invalid_argument("checkpoint: missing parameter '" + name + "'");
        const nlohmann::json& entry = tensors.at(name);
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        auto values = entry.at("values").get<std::vector<double>>();
        if (shape != t.shape())
            throw std::invalid_argument("checkpoint: shape mismatch for parameter '" + name + "'");
        if (values.size() != t.size())
            throw std::invalid_argument("checkpoint: value count mismatch for parameter '" + name +
                                        "'");
        t.values_mut() = values;
    }
    for (auto it = tensors.begin(); it != tensors.end(); ++it)
        if (!out.params.store.params.count(it.key()))
            throw std::invalid_argument("checkpoint: unknown parameter '" + it.key() + "'");
    return out;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const PipelineConfig& pipeline) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    out << checkpoint_json(params, pipeline).dump(1) << "\n";
    if (!out) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: '" + path + "' is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(doc);
}

}  // namespace refineppi
