#pragma once

#include <filesystem>
#include <limits>
#include <optional>

#include "flashcast/config_json.hpp"
#include "flashcast/model.hpp"
#include "flashcast/optim.hpp"

namespace flashcast {

struct TrainingState {
    std::size_t epochs_completed = 0;
    std::uint64_t step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::uint64_t seed = 0;
};

struct Checkpoint {
    ModelParams<float> params;
    std::optional<AdamState<float>> optimizer;
    TrainingState state;
    Json extra = Json::object();
};

// "FCCKPT01", uint64 header length, JSON header (model config, tensor manifest with name, dims,
// dtype, byte offset into the payload and size, training state, caller metadata), then raw
// float32 little-endian tensors. The file is written to a sibling path and renamed into place.
void save_checkpoint(const std::filesystem::path& path, ModelParams<float>& params, const AdamState<float>* optimizer,
                     const TrainingState& state, const Json& extra = Json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace flashcast
