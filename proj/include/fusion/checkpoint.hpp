#pragma once

// Model checkpoint as a self-describing JSON document. Reals are written
// with 17 significant digits so that write -> read -> write is exact.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "fusion/model.hpp"

namespace fusion {

inline constexpr const char* kCheckpointFormat = "fusion-checkpoint/1";

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

nlohmann::json tensor_to_json(const TensorD& t);
TensorD tensor_from_json(const nlohmann::json& j);

} // namespace fusion
