#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flashcast/mgrid.hpp"
#include "flashcast/tensor.hpp"

namespace flashcast {

struct YearRange {
    int first = 0;
    int last = 0;
    bool contains(int y) const { return y >= first && y <= last; }
};

struct SplitConfig {
    YearRange train{2010, 2016};
    YearRange val{2017, 2017};
    YearRange test{2018, 2018};
    void validate() const;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

// Partition by calendar year; a day outside all three ranges is a data error.
SplitIndices split_by_year(const std::vector<Date>& dates, const SplitConfig& cfg);
inline SplitIndices split_by_year(const Dataset& ds, const SplitConfig& cfg) { return split_by_year(ds.dates(), cfg); }

struct ChannelStats {
    std::string name;
    double mean = 0.0;
    double std = 1.0;
    std::uint64_t count = 0;
};

struct NormStats {
    std::vector<ChannelStats> channels;

    std::size_t size() const { return channels.size(); }
    void validate() const;
};

// Single-pass Welford accumulator over valid pixels, one per predictor channel.
class ChannelMoments {
public:
    explicit ChannelMoments(std::size_t channels) : n_(channels, 0), mean_(channels, 0.0), m2_(channels, 0.0) {}

    void add(std::size_t c, double x) {
        ++n_[c];
        const double d = x - mean_[c];
        mean_[c] += d / static_cast<double>(n_[c]);
        m2_[c] += d * (x - mean_[c]);
    }

    void add_sample(const GridSample& s);

    std::uint64_t count(std::size_t c) const { return n_[c]; }
    double mean(std::size_t c) const { return mean_[c]; }
    // Population variance.
    double variance(std::size_t c) const { return n_[c] ? m2_[c] / static_cast<double>(n_[c]) : 0.0; }

private:
    std::vector<std::uint64_t> n_;
    std::vector<double> mean_, m2_;
};

struct TrainingStatistics {
    NormStats norm;
    double anomaly_threshold = 0.0;
    double quantile = 0.99;
    bool positive_only = false;
    std::uint64_t target_pixels = 0;
    std::vector<int> years;
    std::size_t days = 0;
};

// One read of each listed day: predictor moments and the target quantile.
TrainingStatistics compute_training_statistics(const Dataset& ds, const std::vector<std::size_t>& days,
                                               double quantile, bool positive_only = false);

TrainingStatistics compute_training_statistics(const std::vector<GridSample>& samples,
                                               const std::vector<ChannelInfo>& channels, double quantile,
                                               bool positive_only = false);

NormStats compute_norm_stats(const Dataset& ds, const std::vector<std::size_t>& days);

std::string statistics_to_json(const TrainingStatistics& stats);
TrainingStatistics statistics_from_json(const std::string& text, const std::string& source);

void save_statistics(const std::filesystem::path& path, const TrainingStatistics& stats);
TrainingStatistics load_statistics(const std::filesystem::path& path);

struct Batch {
    Tensor4<float> x;     // (B, C, H, W) z-scored predictors
    Tensor4<float> y;     // (B, 1, H, W) raw flash density
    Tensor4<float> mask;  // (B, 1, H, W)
    std::vector<Date> dates;
};

// Normalizes one sample into slot b of a batch. Non-finite raw values give 0 and mask 0.
void normalize_into(const GridSample& s, const NormStats& stats, Batch& batch, std::size_t b);

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices, const NormStats& stats);
Batch make_batch(const std::vector<GridSample>& samples, const NormStats& stats);

// Inverse z-score of one channel value.
inline double denormalize(double z, const ChannelStats& c) { return z * c.std + c.mean; }

}  // namespace flashcast
