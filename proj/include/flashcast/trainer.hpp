#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "flashcast/checkpoint.hpp"
#include "flashcast/loss.hpp"
#include "flashcast/preprocess.hpp"

namespace flashcast {

// Indexed supply of normalized batches.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual Batch batch(const std::vector<std::size_t>& items) const = 0;
};

// Days of a dataset (e.g. one split), normalized on the fly.
class DatasetSource : public SampleSource {
public:
    DatasetSource(const Dataset& ds, std::vector<std::size_t> days, NormStats stats)
        : ds_(ds), days_(std::move(days)), stats_(std::move(stats)) {}
    std::size_t size() const override { return days_.size(); }
    Batch batch(const std::vector<std::size_t>& items) const override;

private:
    const Dataset& ds_;
    std::vector<std::size_t> days_;
    NormStats stats_;
};

class MemorySource : public SampleSource {
public:
    MemorySource(std::vector<GridSample> samples, NormStats stats) : samples_(std::move(samples)), stats_(std::move(stats)) {}
    std::size_t size() const override { return samples_.size(); }
    Batch batch(const std::vector<std::size_t>& items) const override;

private:
    std::vector<GridSample> samples_;
    NormStats stats_;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    std::uint64_t steps = 0;
    double lr = 0.0;
    LossBreakdown train;
    std::optional<LossBreakdown> val;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    bool improved = false;
    double wall_time_s = 0.0;
};

Json to_json(const LossBreakdown& b);
Json to_json(const EpochRecord& r);

struct TrainerOptions {
    ModelConfig model;
    OptimConfig optim;
    LossConfig loss;
    std::uint64_t seed = 0;
    // When set: best.ckpt, final.ckpt and train_log.ndjson are written here.
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::filesystem::path> resume_from;
    // Stored verbatim in every checkpoint header (normalization, split, ...).
    Json checkpoint_extra = Json::object();
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(std::uint64_t step, const LossBreakdown&)> on_step;
};

struct TrainResult {
    ModelParams<float> params;
    AdamState<float> optimizer;
    TrainingState state;
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses;
};

// Evaluation-mode loss over a whole source, aggregated as masked means over all its pixels.
LossBreakdown evaluate_loss(const ModelParams<float>& params, const SampleSource& source, const LossConfig& loss,
                            std::size_t batch_size);

// Validation selects the best checkpoint; without a validation source the epoch's training
// loss is used instead.
TrainResult train(const TrainerOptions& options, const SampleSource& train_source, const SampleSource* val_source);

}  // namespace flashcast
