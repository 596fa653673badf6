#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flashcast/mgrid.hpp"

namespace flashcast {

// Synthetic years whose flash density is a fixed smooth nonlinear function of latent weather
// fields that the nine predictor channels observe with noise.
struct SyntheticConfig {
    GridSpec grid = GridSpec::global_band(10.0);
    int first_year = 2010;
    int last_year = 2018;
    std::uint64_t seed = 1;
    // Multiplicative log-normal spread of the flash density around its deterministic value.
    double target_noise = 0.15;
    // Additive noise on predictors, in units of each channel's latent scale.
    double predictor_noise = 0.05;
    // Channel 9 is constant plus unit Gaussian noise, which gives it known moments.
    double extra_channel_mean = 3.0;
    // Keep only this many days per month (0 for every day).
    unsigned days_per_month = 0;

    void validate() const;
};

std::vector<Date> synthetic_dates(const SyntheticConfig& cfg, int year);

// Days of one year, in date order. Independent across years given the seed.
std::vector<GridSample> generate_synthetic_year(const SyntheticConfig& cfg, int year);

// One container per year, named <prefix><year>.mgrid. Returns the written paths.
std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticConfig& cfg,
                                                           const std::string& prefix = "synthetic_");

}  // namespace flashcast
