#pragma once

#include <string>
#include <vector>

#include "rebnn/dataset.hpp"
#include "rebnn/model.hpp"
#include "rebnn/optimizer.hpp"

namespace rebnn {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One gamma calculation mode for the ablation runner: "off", "constant:<c>",
// "max-grad-only" or "adaptive".
struct GammaModeSpec {
    GammaMode mode = GammaMode::adaptive;
    double constant = 1e-4;
    std::string label;
};

struct OutputConfig {
    std::string dir = "runs/default";
    std::string checkpoint = "model.rbnn";
    std::string telemetry_csv = "telemetry.csv";
    std::string telemetry_json = "telemetry.json";
};

struct AppConfig {
    DatasetSpec dataset;
    ModelConfig model;
    TrainConfig train;
    OutputConfig output;
    std::vector<GammaModeSpec> ablate_modes;  // defaults filled when absent

    // canonical snapshot (sorted keys) used in checkpoints and telemetry
    std::string canonical_json() const;
};

GammaModeSpec parse_gamma_mode(const std::string& text);

// Strict parser: unknown keys anywhere are an error, guarding ablation
// configs against silent typos.
AppConfig parse_config_json(const std::string& json_text);
AppConfig parse_config_file(const std::string& path);

}  // namespace rebnn
