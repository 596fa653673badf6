#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flashcast/grid.hpp"
#include "flashcast/mgrid.hpp"

namespace flashcast {

// One 2-D field on a grid, row 0 at the southern edge. valid[i] == 0 excludes a cell.
struct Field {
    std::size_t height = 0, width = 0;
    std::vector<double> values;
    std::vector<unsigned char> valid;

    Field() = default;
    Field(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill), valid(h * w, 1) {}

    std::size_t cells() const { return values.size(); }
    double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
    bool is_valid(std::size_t r, std::size_t c) const { return valid[r * width + c] != 0; }
    std::size_t valid_count() const;
};

// A time-ordered stack of daily fields.
struct DailyFields {
    std::vector<Date> dates;
    std::vector<Field> fields;
};

// ---- metrics -------------------------------------------------------------------------------

double pearson_r(std::span<const double> a, std::span<const double> b);
double rmse(std::span<const double> a, std::span<const double> b);

// Natural log(1 + x) on valid cells; invalid cells are copied through untouched.
Field log1p_field(const Field& f);

// ---- temporal aggregation --------------------------------------------------------------------

// Per-cell mean over each calendar month's valid days. Every day of the single year must be
// present; gaps are listed in the error. A cell is valid in a month if any of its days is.
std::array<Field, 12> monthly_climatology(const DailyFields& days);

// Unweighted mean of the 12 monthly fields; valid where all months are.
Field annual_mean(std::span<const Field> monthly);

// ---- spatial aggregation ---------------------------------------------------------------------

enum class SplitScheme { Quadrants, EquatorNS, Africa3Way };
SplitScheme parse_split_scheme(const std::string& s);
const char* to_string(SplitScheme s);

// Cells whose center lies in [lat_min, lat_max) x [lon_min, lon_max). lon_min > lon_max wraps
// across the antimeridian.
struct RegionBox {
    std::string name;
    double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
    std::optional<SplitScheme> split;

    bool wraps() const { return lon_min > lon_max; }
    double lon_span() const { return wraps() ? lon_max + 360.0 - lon_min : lon_max - lon_min; }
    bool contains(double lat, double lon) const;
    void validate() const;
};

std::vector<RegionBox> default_regions();

std::vector<std::size_t> region_cells(const GridSpec& grid, const RegionBox& box);

struct SpatialMean {
    double mean = 0.0;
    std::size_t cells = 0;  // valid cells that entered the mean
    double weight = 0.0;    // sum of weights (= cells when unweighted)
};

SpatialMean region_stats(const Field& f, const GridSpec& grid, const RegionBox& box, bool cosine_weighting = false);
double region_mean(const Field& f, const GridSpec& grid, const RegionBox& box, bool cosine_weighting = false);

// Per-coordinate means; present[i] == 0 marks a row or column with no valid cell (value NaN).
struct Profile {
    std::vector<double> coordinate;
    std::vector<double> values;
    std::vector<unsigned char> present;
};

enum class LonBand { Tropics, Extratropics };
// Tropics: |lat| <= 30 (the 30-degree rows included); extratropics: the remaining rows.
bool in_band(double lat, LonBand band);

Profile zonal_lat_profile(const Field& f, const GridSpec& grid);
Profile zonal_lon_profile(const Field& f, const GridSpec& grid, LonBand band, bool cosine_weighting = false);

struct MonthlySeries {
    std::string label;
    std::array<double, 12> values{};
};

// Means over rows north (center > 0) and south (center < 0) of the equator.
std::pair<MonthlySeries, MonthlySeries> hemisphere_series(std::span<const Field> monthly, const GridSpec& grid,
                                                          bool cosine_weighting = false);

// Named sub-boxes tiling the parent; every part must hold at least one grid cell.
std::vector<RegionBox> subregion_split(const RegionBox& box, SplitScheme scheme, const GridSpec& grid);

// ---- full report ---------------------------------------------------------------------------

struct EvaluationConfig {
    std::vector<RegionBox> regions = default_regions();
    bool cosine_weighting = false;
};

// Correlation and error for one observed/predicted pair; r is empty when undefined.
struct PairScore {
    std::optional<double> r;
    double rmse = 0.0;
    std::size_t n = 0;
};

struct RegionReport {
    RegionBox box;
    std::string parent;  // empty for top-level regions
    std::size_t cells = 0;
    std::array<double, 12> observed{}, predicted{};
    PairScore score;
};

struct ProfileReport {
    Profile observed, predicted;
    PairScore score;
};

struct EvaluationReport {
    GridSpec grid;
    int year = 0;
    std::size_t days = 0;
    Field observed_annual, predicted_annual;
    PairScore global_log1p, global_raw;
    std::vector<RegionReport> regions, subregions;
    ProfileReport lat_profile, lon_tropics, lon_extratropics;
    MonthlySeries obs_north, obs_south, pred_north, pred_south;
    PairScore north, south;
    EvaluationConfig config;
};

// Pure function of its inputs. Dates must match one to one and cover one full calendar year.
// Each day's cells are kept only where both fields are valid.
EvaluationReport evaluate(const DailyFields& predictions, const DailyFields& observations, const GridSpec& grid,
                          const EvaluationConfig& config = {});

// CSV per diagnostic, summary.json and SVG plots under dir.
std::vector<std::filesystem::path> write_report(const EvaluationReport& report, const std::filesystem::path& dir);

// Daily fields for one year from a dataset: the target (channel empty) or a named predictor.
DailyFields daily_fields(const Dataset& ds, int year, const std::string& channel = "");

}  // namespace flashcast
