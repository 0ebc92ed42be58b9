#pragma once

// Everything a CLI run needs, in one JSON document. A stored config plus its
// seed reproduces the run.

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fusion/data.hpp"
#include "fusion/model.hpp"
#include "fusion/power.hpp"
#include "fusion/training.hpp"

namespace fusion {

struct ExperimentPaths {
    std::string dataset = "runs/dataset.fgd";
    std::string checkpoints = "runs/checkpoints";
    std::string reports = "runs/reports";
};

struct ExperimentConfig {
    ExperimentPaths paths;
    ModelConfig model = ModelConfig::for_strategy(Strategy::early);
    TrainConfig train;
    GeneratorConfig generator;
    PowerConfig power;
    int folds = 5;
    int calibration_samples = 512; ///< quantization calibration set size
    int agreement_samples = 1000;  ///< held-out samples for the int8 agreement check
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Missing keys take their defaults; unknown keys are rejected.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text);
void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path);

} // namespace fusion
