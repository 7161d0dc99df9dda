#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blindscope/classifier.hpp"
#include "blindscope/errors.hpp"
#include "blindscope/featurize.hpp"

namespace blindscope {

// Stamped into dataset manifests so artifacts can be traced to a build.
inline constexpr const char* kVersionString = "v0.1.0";

struct EvalConfig {
    std::string axis = "snr_db";  // or "num_subcarriers"
    std::vector<double> values = {10.0, 15.0, 20.0, 25.0};
    std::size_t records_per_point = 400;

    void validate() const {
        if (axis != "snr_db" && axis != "num_subcarriers")
            throw ConfigError("eval.axis", "must be \"snr_db\" or \"num_subcarriers\"");
        if (values.empty()) throw ConfigError("eval.values", "must list at least one point");
        if (axis == "num_subcarriers") {
            for (double v : values) {
                bool known = false;
                for (std::size_t c : kSupportedSubcarrierCounts)
                    known |= (v == static_cast<double>(c));
                if (!known)
                    throw ConfigError("eval.values", "unsupported subcarrier count " + std::to_string(v));
            }
        }
        if (records_per_point == 0) throw ConfigError("eval.records_per_point", "must be >= 1");
    }
};

// Everything one run needs, with defaults on the reference operating point:
// N drawn from {128..2048}, CFO 100-500 ppm of a 2 GHz carrier, SNR 10-25 dB.
// Desk-scale presets (configs/desk.json) narrow N to {128, 256} and keep
// images at 128x128 so training fits a single desktop core.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "blindscope_out";
    DatasetSpec dataset;
    ModelConfig model;
    Hyper train;
    EvalConfig eval;

    RunConfig() { dataset.n_values = {128, 256, 512, 1024, 2048}; }

    void validate() const {
        dataset.validate();
        model.validate();
        eval.validate();
        if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
        if (model.input_resolution != dataset.resolution)
            throw ConfigError("model.input_resolution",
                              "must equal dataset.resolution (" + std::to_string(dataset.resolution) + ")");
        if (train.batch_size == 0) throw ConfigError("train.batch_size", "must be >= 1");
        if (!(train.lr > 0.0) || !std::isfinite(train.lr)) throw ConfigError("train.lr", "must be positive and finite");
        if (train.epochs == 0) throw ConfigError("train.epochs", "must be >= 1");
        if (train.val_fraction < 0.0 || train.val_fraction > 0.5)
            throw ConfigError("train.val_fraction", "must lie in [0, 0.5]");
    }
};

namespace detail {

// Overrides are applied field by field onto the defaults; a key that names
// nothing is a config typo and gets rejected rather than ignored.
inline void reject_unknown(const nlohmann::json& j, const std::string& scope,
                           std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok |= (key == k);
        if (!ok) throw ConfigError(scope.empty() ? key : scope + "." + key, "unknown field");
    }
}

template <typename T>
inline void get_field(const nlohmann::json& j, const char* key, const std::string& scope, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(scope.empty() ? key : scope + "." + key, e.what());
    }
}

// A range is either [lo, hi] or a single pinned number.
inline void get_range(const nlohmann::json& j, const char* key, const std::string& scope, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    const std::string field = scope + "." + key;
    if (v.is_number()) {
        lo = hi = v.get<double>();
        return;
    }
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError(field, "expected a number or [lo, hi]");
    lo = v[0].get<double>();
    hi = v[1].get<double>();
}

inline void parse_dataset(const nlohmann::json& j, DatasetSpec& d) {
    reject_unknown(j, "dataset",
                   {"num_records", "n_values", "cp_fraction", "snr_db", "cfo_ppm", "subcarrier_spacing_hz",
                    "carrier_hz", "num_symbols", "resolution", "axis_range", "channel", "label_cycle"});
    get_field(j, "num_records", "dataset", d.num_records);
    if (j.contains("channel")) {
        std::string channel;
        get_field(j, "channel", "dataset", channel);
        if (channel == "flat")
            d.profile = MultipathProfile{{0.0}, {0.0}};
        else if (channel == "sui1")
            d.profile = MultipathProfile{};
        else
            throw ConfigError("dataset.channel", "must be \"flat\" or \"sui1\"");
    }
    get_field(j, "n_values", "dataset", d.n_values);
    get_range(j, "cp_fraction", "dataset", d.cp_fraction_min, d.cp_fraction_max);
    get_range(j, "snr_db", "dataset", d.snr_db_min, d.snr_db_max);
    get_range(j, "cfo_ppm", "dataset", d.cfo_ppm_min, d.cfo_ppm_max);
    get_field(j, "subcarrier_spacing_hz", "dataset", d.subcarrier_spacing_hz);
    get_field(j, "carrier_hz", "dataset", d.carrier_hz);
    get_field(j, "num_symbols", "dataset", d.num_symbols);
    get_field(j, "resolution", "dataset", d.resolution);
    get_field(j, "axis_range", "dataset", d.axis_range);
    get_field(j, "label_cycle", "dataset", d.label_cycle);
}

inline void parse_model(const nlohmann::json& j, ModelConfig& m) {
    reject_unknown(j, "model",
                   {"input_resolution", "stem_channels", "stage_widths", "blocks_per_stage", "num_classes",
                    "affine_only_norm", "stem_pool", "seed"});
    get_field(j, "input_resolution", "model", m.input_resolution);
    get_field(j, "stem_channels", "model", m.stem_channels);
    get_field(j, "stage_widths", "model", m.stage_widths);
    get_field(j, "blocks_per_stage", "model", m.blocks_per_stage);
    get_field(j, "num_classes", "model", m.num_classes);
    get_field(j, "affine_only_norm", "model", m.affine_only_norm);
    get_field(j, "stem_pool", "model", m.stem_pool);
    get_field(j, "seed", "model", m.seed);
}

inline void parse_train(const nlohmann::json& j, Hyper& h) {
    reject_unknown(j, "train", {"batch_size", "lr", "epochs", "val_fraction", "require_all_classes"});
    get_field(j, "batch_size", "train", h.batch_size);
    get_field(j, "lr", "train", h.lr);
    get_field(j, "epochs", "train", h.epochs);
    get_field(j, "val_fraction", "train", h.val_fraction);
    get_field(j, "require_all_classes", "train", h.require_all_classes);
}

inline void parse_eval(const nlohmann::json& j, EvalConfig& e) {
    reject_unknown(j, "eval", {"axis", "values", "records_per_point"});
    get_field(j, "axis", "eval", e.axis);
    get_field(j, "values", "eval", e.values);
    get_field(j, "records_per_point", "eval", e.records_per_point);
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig rc;
    detail::reject_unknown(j, "", {"seed", "output_dir", "dataset", "model", "train", "eval"});
    detail::get_field(j, "seed", "", rc.seed);
    detail::get_field(j, "output_dir", "", rc.output_dir);
    if (j.contains("dataset")) detail::parse_dataset(j.at("dataset"), rc.dataset);
    if (j.contains("model")) detail::parse_model(j.at("model"), rc.model);
    if (j.contains("train")) detail::parse_train(j.at("train"), rc.train);
    if (j.contains("eval")) detail::parse_eval(j.at("eval"), rc.eval);
    rc.validate();
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // nlohmann reports a byte offset; turn it into a line for the message.
        std::size_t line = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
            if (text[i] == '\n') ++line;
        throw ConfigError("config", path.string() + " line " + std::to_string(line) + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace blindscope
