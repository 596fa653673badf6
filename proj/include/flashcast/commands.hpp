#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>

#include "flashcast/evaluation.hpp"
#include "flashcast/run_config.hpp"
#include "flashcast/trainer.hpp"

namespace flashcast {

// Bad invocation: missing input, an output that would be overwritten without --force, ...
// Mapped to exit code 2 together with ConfigError.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error("usage error: " + what) {}
};

std::vector<std::filesystem::path> cmd_synth(const SyntheticConfig& cfg, const std::filesystem::path& out_dir, bool force);

// Opens every container, reads every day and summarizes grid, channels, dates and masking.
Json cmd_convert_check(const std::filesystem::path& dataset, const std::optional<GridSpec>& grid);

struct StatsOutcome {
    TrainingStatistics stats;
    std::filesystem::path path;
    std::set<int> years_read;
    std::set<std::string> files_read;
};

// Training split only; a read outside it is reported as an internal error.
StatsOutcome cmd_stats(const RunConfig& cfg, const std::filesystem::path& out, bool force);

struct TrainOutcome {
    TrainResult result;
    std::filesystem::path run_dir;
    Json audit;
};

// Writes best.ckpt, final.ckpt, train_log.ndjson, resolved_config.json and access_audit.json into
// paths.output_dir. Statistics come from paths.stats, or are computed and saved as stats.json.
TrainOutcome cmd_train(const RunConfig& cfg, bool force, const std::optional<std::filesystem::path>& resume,
                       std::ostream* progress = nullptr);

struct PredictOutcome {
    std::filesystem::path path;
    std::size_t days = 0;
    int year = 0;
};

// MGRID output: target = predicted density, predictor channels = logit and magnitude, mask as input.
PredictOutcome cmd_predict(const RunConfig& cfg, const std::filesystem::path& out, bool force);

EvaluationReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& out_dir, bool force);

// Markdown digest of a run directory (training log plus evaluation summary when present).
std::filesystem::path cmd_report(const std::filesystem::path& run_dir, bool force);

// Default locations inside the run directory.
std::filesystem::path default_stats_path(const RunConfig& cfg);
std::filesystem::path default_checkpoint_path(const RunConfig& cfg);
std::filesystem::path default_predictions_path(const RunConfig& cfg, int year);
int default_predict_year(const RunConfig& cfg);
int default_evaluation_year(const RunConfig& cfg);

// Command-line entry point. Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flashcast
