#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "flashcast/config_json.hpp"
#include "flashcast/evaluation.hpp"

namespace flashcast {

struct RunPaths {
    std::filesystem::path dataset;      // MGRID file or directory of yearly files
    std::filesystem::path stats;        // normalization + threshold sidecar
    std::filesystem::path checkpoint;   // used by predict
    std::filesystem::path output_dir;   // run directory for train / predict / evaluate
    std::filesystem::path predictions;  // MGRID written by predict, read by evaluate
};

struct PredictOptions {
    DensityMode mode = DensityMode::Gated;
    double threshold = 0.5;
    std::optional<int> year;  // defaults to the first test year
};

// Everything a command needs, read from one JSON file. Unknown keys are rejected.
struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    OptimConfig optim;
    // anomaly_threshold null means "take it from the statistics file".
    LossConfig loss;
    SplitConfig split;
    std::optional<GridSpec> grid;  // expected dataset grid, checked when present
    RunPaths paths;
    PredictOptions predict;
    EvaluationConfig evaluation;
    std::optional<int> evaluation_year;
    SyntheticConfig synthetic;
};

Json to_json(const RegionBox& b);
void from_json(const Json& j, RegionBox& b, const std::string& where = "region");

Json to_json(const RunConfig& c);
// Relative paths are resolved against base_dir.
RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace flashcast
