#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "voxbox/model.hpp"
#include "voxbox/preprocess.hpp"
#include "voxbox/trainer.hpp"

namespace voxbox {

/// One run: {"model": ..., "preprocess": ..., "train": ...}. Missing keys keep
/// their defaults; unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    PreprocessConfig preprocess;
    TrainConfig train;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

/// The model section of a checkpoint's embedded config.
ModelConfig model_config_from_checkpoint(const std::string& config_json);

} // namespace voxbox
