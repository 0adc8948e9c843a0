#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "nearl/config.hpp"
#include "nearl/dataset.hpp"

namespace nearl {

// Where a command gets its data: a generated spec, an NRLD1 file, or both
// (the file's header must then echo the spec).
struct DataSource {
    std::optional<std::filesystem::path> path;
    std::optional<DatasetSpec> spec;
};

// Everything a CLI run needs. Loaded from a JSON file whose keys are checked
// strictly; relative paths are resolved against the file's directory.
//
//   {
//     "model":  { "preset": "toy", ...ModelConfig fields... },
//     "train":  { ...TrainConfig fields... },
//     "data":   { "path": "data.nrld" } | { "spec": { ...DatasetSpec fields... } },
//     "output_dir": "runs/a",
//     "checkpoint": "runs/a/checkpoint.nearl",   (eval / analyze)
//     "suite": "modules"                         (ablate)
//   }
struct RunConfig {
    ModelConfig model = ModelConfig::toy();
    TrainConfig train;
    DataSource data;
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::string> suite;
    std::string command;  // informational; set in manifests
};

// Throws Error(config) on malformed JSON, unknown keys, wrong value types or
// failed validation.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully explicit echo: every field, absolute paths, all seeds. Parsing it
// back yields the same RunConfig.
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const DatasetSpec& spec);

ModelConfig parse_model_config(const nlohmann::json& j);
TrainConfig parse_train_config(const nlohmann::json& j);
DatasetSpec parse_dataset_spec(const nlohmann::json& j);

}  // namespace nearl
