#include "flashcast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "json.hpp"

namespace flashcast {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::size_t Field::valid_count() const {
    return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](unsigned char v) { return v != 0; }));
}

namespace {

void require_same_dims(const Field& a, const Field& b, const char* what) {
    if (a.height != b.height) throw DimensionError("height", std::string(what) + ": field heights differ");
    if (a.width != b.width) throw DimensionError("width", std::string(what) + ": field widths differ");
}

void require_grid_dims(const Field& f, const GridSpec& g) {
    if (f.height != g.height()) {
        throw DimensionError("height", "field has " + std::to_string(f.height) + " rows, grid has " + std::to_string(g.height()));
    }
    if (f.width != g.width()) {
        throw DimensionError("width", "field has " + std::to_string(f.width) + " columns, grid has " + std::to_string(g.width()));
    }
}

double normalize_lon(double lon) {
    double x = std::fmod(lon + 180.0, 360.0);
    if (x < 0) x += 360.0;
    return x - 180.0;
}

double cos_weight(double lat_deg, bool on) { return on ? std::cos(lat_deg * std::numbers::pi / 180.0) : 1.0; }

std::size_t count_cells(const GridSpec& g, const RegionBox& box) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < g.height(); ++r)
        for (std::size_t c = 0; c < g.width(); ++c) n += box.contains(g.lat_center(r), g.lon_center(c)) ? 1 : 0;
    return n;
}

}  // namespace

// ---- metrics ---------------------------------------------------------------------------------

double pearson_r(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw EvaluationError("length", "pearson_r: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    if (a.size() < 2) throw EvaluationError("length", "pearson_r needs at least 2 points");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw EvaluationError("undefined_correlation", "pearson_r of a constant series");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double rmse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw EvaluationError("length", "rmse: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    if (a.empty()) throw EvaluationError("length", "rmse of empty series");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

Field log1p_field(const Field& f) {
    Field out = f;
    for (std::size_t i = 0; i < f.cells(); ++i) {
        if (!f.valid[i]) continue;
        if (!(f.values[i] >= 0.0)) {
            throw DataError("log1p_field: negative value " + std::to_string(f.values[i]) + " at cell " + std::to_string(i));
        }
        out.values[i] = std::log1p(f.values[i]);
    }
    return out;
}

// ---- temporal aggregation ----------------------------------------------------------------------

std::array<Field, 12> monthly_climatology(const DailyFields& days) {
    if (days.dates.size() != days.fields.size()) throw EvaluationError("alignment", "dates and fields differ in count");
    if (days.dates.empty()) throw EvaluationError("coverage", "no days given");
    const int year = days.dates.front().year;
    std::set<Date> seen;
    for (const Date& d : days.dates) {
        if (d.year != year) throw EvaluationError("coverage", "days span more than one year (" + d.str() + ")");
        if (!seen.insert(d).second) throw EvaluationError("coverage", "duplicate day " + d.str());
    }
    std::vector<std::string> gaps;
    std::size_t missing = 0;
    Date d{year, 1, 1};
    while (d.year == year) {
        if (!seen.count(d)) {
            Date first = d, last = d;
            while (d.year == year && !seen.count(d)) {
                last = d;
                ++missing;
                d = d.next();
            }
            gaps.push_back(first == last ? first.str() : first.str() + ".." + last.str());
        } else {
            d = d.next();
        }
    }
    if (!gaps.empty()) {
        std::string list;
        for (std::size_t i = 0; i < gaps.size() && i < 12; ++i) list += (i ? ", " : "") + gaps[i];
        if (gaps.size() > 12) list += ", ...";
        throw EvaluationError("coverage", std::to_string(missing) + " missing day(s) in " + std::to_string(year) + ": " + list);
    }

    const Field& first = days.fields.front();
    std::array<Field, 12> out;
    std::array<std::vector<std::size_t>, 12> counts;
    for (std::size_t m = 0; m < 12; ++m) {
        out[m] = Field(first.height, first.width, 0.0);
        counts[m].assign(first.cells(), 0);
    }
    for (std::size_t k = 0; k < days.fields.size(); ++k) {
        const Field& f = days.fields[k];
        require_same_dims(f, first, "monthly_climatology");
        const std::size_t m = static_cast<std::size_t>(days.dates[k].month - 1);
        for (std::size_t i = 0; i < f.cells(); ++i) {
            if (!f.valid[i]) continue;
            out[m].values[i] += f.values[i];
            ++counts[m][i];
        }
    }
    for (std::size_t m = 0; m < 12; ++m) {
        for (std::size_t i = 0; i < first.cells(); ++i) {
            if (counts[m][i] == 0) {
                out[m].valid[i] = 0;
                out[m].values[i] = 0.0;
            } else {
                out[m].values[i] /= static_cast<double>(counts[m][i]);
            }
        }
    }
    return out;
}

Field annual_mean(std::span<const Field> monthly) {
    if (monthly.size() != 12) throw EvaluationError("count", "annual_mean needs 12 monthly fields, got " + std::to_string(monthly.size()));
    Field out(monthly[0].height, monthly[0].width, 0.0);
    for (const Field& f : monthly) {
        require_same_dims(f, monthly[0], "annual_mean");
        for (std::size_t i = 0; i < f.cells(); ++i) {
            out.values[i] += f.values[i];
            if (!f.valid[i]) out.valid[i] = 0;
        }
    }
    for (std::size_t i = 0; i < out.cells(); ++i) {
        out.values[i] = out.valid[i] ? out.values[i] / 12.0 : 0.0;
    }
    return out;
}

// ---- spatial aggregation ----------------------------------------------------------------------

SplitScheme parse_split_scheme(const std::string& s) {
    if (s == "quadrants") return SplitScheme::Quadrants;
    if (s == "equator_ns") return SplitScheme::EquatorNS;
    if (s == "africa_3way") return SplitScheme::Africa3Way;
    throw ConfigError("unknown subregion scheme '" + s + "' (expected quadrants, equator_ns or africa_3way)");
}

const char* to_string(SplitScheme s) {
    switch (s) {
        case SplitScheme::Quadrants: return "quadrants";
        case SplitScheme::EquatorNS: return "equator_ns";
        case SplitScheme::Africa3Way: return "africa_3way";
    }
    return "?";
}

bool RegionBox::contains(double lat, double lon) const {
    if (!(lat >= lat_min && lat < lat_max)) return false;
    const double x = normalize_lon(lon);
    if (!wraps()) return x >= lon_min && x < lon_max;
    return x >= lon_min || x < lon_max;
}

void RegionBox::validate() const {
    if (name.empty()) throw ConfigError("region name must not be empty");
    if (!(lat_min >= -90.0 && lat_max <= 90.0 && lat_min < lat_max)) {
        throw ConfigError("region " + name + ": latitude range must satisfy -90 <= min < max <= 90");
    }
    if (!(lon_min >= -180.0 && lon_min <= 180.0 && lon_max >= -180.0 && lon_max <= 180.0)) {
        throw ConfigError("region " + name + ": longitudes must lie in [-180, 180]");
    }
    if (lon_min == lon_max) throw ConfigError("region " + name + ": empty longitude range");
}

std::vector<RegionBox> default_regions() {
    return {{"USA", 25, 50, -125, -65, SplitScheme::Quadrants},
            {"South America", -35, 10, -85, -35, SplitScheme::EquatorNS},
            {"Africa", -35, 15, -20, 50, SplitScheme::Africa3Way},
            {"Australia", -45, -10, 110, 155, SplitScheme::Quadrants},
            {"Maritime Continent", -10, 10, 90, 160, SplitScheme::Quadrants}};
}

std::vector<std::size_t> region_cells(const GridSpec& g, const RegionBox& box) {
    box.validate();
    std::vector<std::size_t> cells;
    for (std::size_t r = 0; r < g.height(); ++r)
        for (std::size_t c = 0; c < g.width(); ++c)
            if (box.contains(g.lat_center(r), g.lon_center(c))) cells.push_back(r * g.width() + c);
    if (cells.empty()) throw EvaluationError("empty_region", "region " + box.name + " contains no grid cell");
    return cells;
}

SpatialMean region_stats(const Field& f, const GridSpec& g, const RegionBox& box, bool cosine_weighting) {
    require_grid_dims(f, g);
    SpatialMean out;
    double acc = 0;
    for (std::size_t idx : region_cells(g, box)) {
        if (!f.valid[idx]) continue;
        const double w = cos_weight(g.lat_center(idx / g.width()), cosine_weighting);
        acc += w * f.values[idx];
        out.weight += w;
        ++out.cells;
    }
    if (out.cells == 0) throw EvaluationError("empty_region", "region " + box.name + " has no valid cell");
    out.mean = acc / out.weight;
    return out;
}

double region_mean(const Field& f, const GridSpec& g, const RegionBox& box, bool cosine_weighting) {
    return region_stats(f, g, box, cosine_weighting).mean;
}

bool in_band(double lat, LonBand band) {
    const bool tropical = lat >= -30.0 && lat <= 30.0;
    return band == LonBand::Tropics ? tropical : !tropical;
}

Profile zonal_lat_profile(const Field& f, const GridSpec& g) {
    require_grid_dims(f, g);
    Profile p;
    for (std::size_t r = 0; r < g.height(); ++r) {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < g.width(); ++c) {
            if (!f.is_valid(r, c)) continue;
            s += f.at(r, c);
            ++n;
        }
        p.coordinate.push_back(g.lat_center(r));
        p.values.push_back(n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
        p.present.push_back(n ? 1 : 0);
    }
    return p;
}

Profile zonal_lon_profile(const Field& f, const GridSpec& g, LonBand band, bool cosine_weighting) {
    require_grid_dims(f, g);
    Profile p;
    for (std::size_t c = 0; c < g.width(); ++c) {
        double s = 0, wsum = 0;
        for (std::size_t r = 0; r < g.height(); ++r) {
            const double lat = g.lat_center(r);
            if (!in_band(lat, band) || !f.is_valid(r, c)) continue;
            const double w = cos_weight(lat, cosine_weighting);
            s += w * f.at(r, c);
            wsum += w;
        }
        p.coordinate.push_back(g.lon_center(c));
        p.values.push_back(wsum > 0 ? s / wsum : std::numeric_limits<double>::quiet_NaN());
        p.present.push_back(wsum > 0 ? 1 : 0);
    }
    return p;
}

std::pair<MonthlySeries, MonthlySeries> hemisphere_series(std::span<const Field> monthly, const GridSpec& g,
                                                          bool cosine_weighting) {
    if (monthly.size() != 12) throw EvaluationError("count", "hemisphere_series needs 12 monthly fields");
    MonthlySeries north{"north", {}}, south{"south", {}};
    for (std::size_t m = 0; m < 12; ++m) {
        const Field& f = monthly[m];
        require_grid_dims(f, g);
        double sn = 0, wn = 0, ss = 0, ws = 0;
        for (std::size_t r = 0; r < g.height(); ++r) {
            const double lat = g.lat_center(r);
            if (lat == 0.0) continue;
            const double w = cos_weight(lat, cosine_weighting);
            for (std::size_t c = 0; c < g.width(); ++c) {
                if (!f.is_valid(r, c)) continue;
                if (lat > 0) {
                    sn += w * f.at(r, c);
                    wn += w;
                } else {
                    ss += w * f.at(r, c);
                    ws += w;
                }
            }
        }
        if (wn == 0 || ws == 0) throw EvaluationError("empty_region", "a hemisphere has no valid cell in month " + std::to_string(m + 1));
        north.values[m] = sn / wn;
        south.values[m] = ss / ws;
    }
    return {north, south};
}

std::vector<RegionBox> subregion_split(const RegionBox& box, SplitScheme scheme, const GridSpec& g) {
    box.validate();
    const double lat_mid = 0.5 * (box.lat_min + box.lat_max);
    double lon_mid = box.lon_min + 0.5 * box.lon_span();
    if (lon_mid >= 180.0) lon_mid -= 360.0;
    auto part = [&](const char* name, double a, double b, double lo, double hi) {
        return RegionBox{name, a, b, lo, hi, std::nullopt};
    };
    std::vector<RegionBox> parts;
    switch (scheme) {
        case SplitScheme::Quadrants:
            parts = {part("NW", lat_mid, box.lat_max, box.lon_min, lon_mid), part("NE", lat_mid, box.lat_max, lon_mid, box.lon_max),
                     part("SW", box.lat_min, lat_mid, box.lon_min, lon_mid), part("SE", box.lat_min, lat_mid, lon_mid, box.lon_max)};
            break;
        case SplitScheme::EquatorNS:
        case SplitScheme::Africa3Way:
            if (!(box.lat_min < 0.0 && box.lat_max > 0.0)) {
                throw EvaluationError("split", "region " + box.name + " does not straddle the equator");
            }
            if (scheme == SplitScheme::EquatorNS) {
                parts = {part("N", 0.0, box.lat_max, box.lon_min, box.lon_max), part("S", box.lat_min, 0.0, box.lon_min, box.lon_max)};
            } else {
                parts = {part("NW", 0.0, box.lat_max, box.lon_min, lon_mid), part("NE", 0.0, box.lat_max, lon_mid, box.lon_max),
                         part("S", box.lat_min, 0.0, box.lon_min, box.lon_max)};
            }
            break;
    }
    for (const auto& p : parts) {
        if (count_cells(g, p) == 0) {
            throw EvaluationError("split", "region " + box.name + " is too small to split (" + p.name + " holds no cell)");
        }
    }
    return parts;
}

// ---- full report -------------------------------------------------------------------------------

namespace {

PairScore score_pair(const std::vector<double>& obs, const std::vector<double>& pred) {
    PairScore s;
    s.n = obs.size();
    if (obs.empty()) return s;
    s.rmse = rmse(obs, pred);
    if (obs.size() >= 2) {
        try {
            s.r = pearson_r(obs, pred);
        } catch (const EvaluationError& e) {
            if (e.kind() != "undefined_correlation") throw;
        }
    }
    return s;
}

ProfileReport profile_report(Profile obs, Profile pred) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < obs.values.size(); ++i) {
        if (obs.present[i] && pred.present[i]) {
            a.push_back(obs.values[i]);
            b.push_back(pred.values[i]);
        }
    }
    return {std::move(obs), std::move(pred), score_pair(a, b)};
}

RegionReport region_report(const RegionBox& box, const std::string& parent, const std::array<Field, 12>& obs,
                           const std::array<Field, 12>& pred, const Field& annual, const GridSpec& g, bool cosw) {
    RegionReport r;
    r.box = box;
    r.parent = parent;
    for (std::size_t idx : region_cells(g, box)) r.cells += annual.valid[idx] ? 1 : 0;
    for (std::size_t m = 0; m < 12; ++m) {
        r.observed[m] = region_mean(obs[m], g, box, cosw);
        r.predicted[m] = region_mean(pred[m], g, box, cosw);
    }
    r.score = score_pair({r.observed.begin(), r.observed.end()}, {r.predicted.begin(), r.predicted.end()});
    return r;
}

}  // namespace

EvaluationReport evaluate(const DailyFields& predictions, const DailyFields& observations, const GridSpec& g,
                          const EvaluationConfig& config) {
    g.validate();
    for (const auto& r : config.regions) r.validate();
    if (predictions.dates.size() != predictions.fields.size() || observations.dates.size() != observations.fields.size()) {
        throw EvaluationError("alignment", "dates and fields differ in count");
    }
    if (predictions.dates.size() != observations.dates.size()) {
        throw EvaluationError("alignment", std::to_string(predictions.dates.size()) + " predicted days vs " +
                                               std::to_string(observations.dates.size()) + " observed days");
    }
    for (std::size_t k = 0; k < predictions.dates.size(); ++k) {
        if (predictions.dates[k] != observations.dates[k]) {
            throw EvaluationError("alignment", "day " + std::to_string(k) + ": predicted " + predictions.dates[k].str() +
                                                   ", observed " + observations.dates[k].str());
        }
    }

    DailyFields obs = observations, pred = predictions;
    for (std::size_t k = 0; k < obs.fields.size(); ++k) {
        require_grid_dims(obs.fields[k], g);
        require_grid_dims(pred.fields[k], g);
        for (std::size_t i = 0; i < obs.fields[k].cells(); ++i) {
            const unsigned char both = obs.fields[k].valid[i] && pred.fields[k].valid[i];
            obs.fields[k].valid[i] = pred.fields[k].valid[i] = both;
        }
    }
    const auto obs_m = monthly_climatology(obs);
    const auto pred_m = monthly_climatology(pred);

    EvaluationReport rep;
    rep.grid = g;
    rep.config = config;
    rep.year = obs.dates.front().year;
    rep.days = obs.dates.size();
    rep.observed_annual = annual_mean(obs_m);
    rep.predicted_annual = annual_mean(pred_m);

    std::vector<double> o_raw, p_raw, o_log, p_log;
    const Field ol = log1p_field(rep.observed_annual), pl = log1p_field(rep.predicted_annual);
    for (std::size_t i = 0; i < ol.cells(); ++i) {
        if (!ol.valid[i] || !pl.valid[i]) continue;
        o_raw.push_back(rep.observed_annual.values[i]);
        p_raw.push_back(rep.predicted_annual.values[i]);
        o_log.push_back(ol.values[i]);
        p_log.push_back(pl.values[i]);
    }
    if (o_raw.empty()) throw EvaluationError("empty_region", "no cell is valid in every month");
    rep.global_log1p = score_pair(o_log, p_log);
    rep.global_raw = score_pair(o_raw, p_raw);

    const bool cosw = config.cosine_weighting;
    for (const auto& box : config.regions) {
        rep.regions.push_back(region_report(box, "", obs_m, pred_m, rep.observed_annual, g, cosw));
        if (box.split) {
            for (const auto& sub : subregion_split(box, *box.split, g)) {
                rep.subregions.push_back(region_report(sub, box.name, obs_m, pred_m, rep.observed_annual, g, cosw));
            }
        }
    }

    rep.lat_profile = profile_report(zonal_lat_profile(rep.observed_annual, g), zonal_lat_profile(rep.predicted_annual, g));
    rep.lon_tropics = profile_report(zonal_lon_profile(rep.observed_annual, g, LonBand::Tropics, cosw),
                                     zonal_lon_profile(rep.predicted_annual, g, LonBand::Tropics, cosw));
    rep.lon_extratropics = profile_report(zonal_lon_profile(rep.observed_annual, g, LonBand::Extratropics, cosw),
                                          zonal_lon_profile(rep.predicted_annual, g, LonBand::Extratropics, cosw));

    std::tie(rep.obs_north, rep.obs_south) = hemisphere_series(obs_m, g, cosw);
    std::tie(rep.pred_north, rep.pred_south) = hemisphere_series(pred_m, g, cosw);
    auto vec = [](const MonthlySeries& s) { return std::vector<double>(s.values.begin(), s.values.end()); };
    rep.north = score_pair(vec(rep.obs_north), vec(rep.pred_north));
    rep.south = score_pair(vec(rep.obs_south), vec(rep.pred_south));
    return rep;
}

// ---- report files ------------------------------------------------------------------------------

namespace {

std::string num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

json score_json(const PairScore& s) {
    return {{"r", s.r ? json(*s.r) : json(nullptr)}, {"rmse", s.rmse}, {"n", s.n}};
}

json box_json(const RegionBox& b) {
    json j{{"name", b.name}, {"lat", {b.lat_min, b.lat_max}}, {"lon", {b.lon_min, b.lon_max}}};
    if (b.split) j["split"] = to_string(*b.split);
    return j;
}

class TextFile {
public:
    TextFile(const fs::path& p, std::vector<fs::path>& written) : out_(p, std::ios::trunc | std::ios::binary) {
        if (!out_) throw DataError("cannot write " + p.string());
        written.push_back(p);
    }
    std::ofstream& operator*() { return out_; }
    template <typename V>
    TextFile& operator<<(const V& v) {
        out_ << v;
        return *this;
    }

private:
    std::ofstream out_;
};

struct PlotSeries {
    std::string name, color;
    std::vector<double> x, y;
    bool points = false;
};

// Minimal SVG chart: linear axes, min/max tick labels, polylines broken at NaN, optional markers.
std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<PlotSeries>& series, bool diagonal = false) {
    const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (diagonal) x0 = y0 = std::min(x0, y0), x1 = y1 = std::max(x1, y1);
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    char buf[160];
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
    std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"black\"/>\n", L, T,
                  W - L - R, H - T - B);
    s += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%s</text>\n", (L + W - R) / 2, H - 12, xlabel.c_str());
    s += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"16\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 16 %g)\">%s</text>\n",
                  (T + H - B) / 2, (T + H - B) / 2, ylabel.c_str());
    s += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.4g</text><text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.4g</text>\n",
                  L, H - B + 16, x0, W - R, H - B + 16, x1);
    s += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.4g</text><text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.4g</text>\n",
                  L - 4, H - B, y0, L - 4, T + 10, y1);
    s += buf;
    if (diagonal) {
        std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n", px(x0),
                      py(y0), px(x1), py(y1));
        s += buf;
    }
    double legend_y = T + 16;
    for (const auto& ser : series) {
        if (ser.points) {
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
                std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\"/>\n", px(ser.x[i]), py(ser.y[i]),
                              ser.color.c_str());
                s += buf;
            }
        } else {
            std::string pts;
            auto flush = [&] {
                if (!pts.empty()) s += "<polyline fill=\"none\" stroke=\"" + ser.color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
                pts.clear();
            };
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                if (!std::isfinite(ser.y[i])) {
                    flush();
                    continue;
                }
                std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(ser.x[i]), py(ser.y[i]));
                pts += buf;
            }
            flush();
        }
        std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">%s</text>\n", L + 8, legend_y, ser.color.c_str(),
                      ser.name.c_str());
        s += buf;
        legend_y += 14;
    }
    return s + "</svg>\n";
}

void write_profile_csv(const fs::path& p, const char* coord, const ProfileReport& pr, std::vector<fs::path>& written) {
    TextFile f(p, written);
    f << coord << ",observed,predicted\n";
    for (std::size_t i = 0; i < pr.observed.coordinate.size(); ++i) {
        f << num(pr.observed.coordinate[i]) << ',' << num(pr.observed.values[i]) << ',' << num(pr.predicted.values[i]) << '\n';
    }
}

std::string profile_svg(const std::string& title, const char* coord, const ProfileReport& pr) {
    return svg_chart(title, coord, "mean density",
                     {{"observed", "#1f77b4", pr.observed.coordinate, pr.observed.values, false},
                      {"predicted", "#d62728", pr.predicted.coordinate, pr.predicted.values, false}});
}

}  // namespace

std::vector<fs::path> write_report(const EvaluationReport& rep, const fs::path& dir) {
    fs::create_directories(dir / "plots");
    std::vector<fs::path> written;
    const GridSpec& g = rep.grid;

    {
        TextFile f(dir / "annual_mean.csv", written);
        f << "row,col,lat,lon,observed,predicted,observed_log1p,predicted_log1p\n";
        for (std::size_t r = 0; r < g.height(); ++r)
            for (std::size_t c = 0; c < g.width(); ++c) {
                const std::size_t i = r * g.width() + c;
                if (!rep.observed_annual.valid[i] || !rep.predicted_annual.valid[i]) continue;
                const double o = rep.observed_annual.values[i], p = rep.predicted_annual.values[i];
                f << r << ',' << c << ',' << num(g.lat_center(r)) << ',' << num(g.lon_center(c)) << ',' << num(o) << ',' << num(p)
                  << ',' << num(std::log1p(o)) << ',' << num(std::log1p(p)) << '\n';
            }
    }
    auto monthly_csv = [&](const fs::path& p, const std::vector<RegionReport>& rows, bool sub) {
        TextFile f(p, written);
        f << (sub ? "region,subregion,month,observed,predicted\n" : "region,month,observed,predicted\n");
        for (const auto& r : rows)
            for (std::size_t m = 0; m < 12; ++m) {
                f << csv_field(sub ? r.parent : r.box.name) << ',';
                if (sub) f << csv_field(r.box.name) << ',';
                f << m + 1 << ',' << num(r.observed[m]) << ',' << num(r.predicted[m]) << '\n';
            }
    };
    monthly_csv(dir / "regional_monthly.csv", rep.regions, false);
    monthly_csv(dir / "subregional_monthly.csv", rep.subregions, true);
    {
        TextFile f(dir / "region_scores.csv", written);
        f << "region,subregion,cells,r,rmse\n";
        for (const auto* rows : {&rep.regions, &rep.subregions})
            for (const auto& r : *rows) {
                const bool sub = !r.parent.empty();
                f << csv_field(sub ? r.parent : r.box.name) << ',' << csv_field(sub ? r.box.name : "") << ',' << r.cells << ','
                  << (r.score.r ? num(*r.score.r) : "") << ',' << num(r.score.rmse) << '\n';
            }
    }
    write_profile_csv(dir / "zonal_lat.csv", "lat", rep.lat_profile, written);
    write_profile_csv(dir / "zonal_lon_tropics.csv", "lon", rep.lon_tropics, written);
    write_profile_csv(dir / "zonal_lon_extratropics.csv", "lon", rep.lon_extratropics, written);
    {
        TextFile f(dir / "hemisphere_monthly.csv", written);
        f << "hemisphere,month,observed,predicted\n";
        for (std::size_t m = 0; m < 12; ++m) f << "north," << m + 1 << ',' << num(rep.obs_north.values[m]) << ',' << num(rep.pred_north.values[m]) << '\n';
        for (std::size_t m = 0; m < 12; ++m) f << "south," << m + 1 << ',' << num(rep.obs_south.values[m]) << ',' << num(rep.pred_south.values[m]) << '\n';
    }

    json summary;
    summary["year"] = rep.year;
    summary["days"] = rep.days;
    summary["grid"] = {{"lat_min", g.lat_min}, {"lat_max", g.lat_max}, {"lon_min", g.lon_min}, {"lon_max", g.lon_max}, {"resolution", g.resolution}};
    summary["cosine_weighting"] = rep.config.cosine_weighting;
    summary["global"] = {{"log1p", score_json(rep.global_log1p)}, {"raw", score_json(rep.global_raw)}};
    json regions = json::array();
    for (const auto& r : rep.regions) {
        json j = box_json(r.box);
        j["cells"] = r.cells;
        j["score"] = score_json(r.score);
        json subs = json::array();
        for (const auto& s : rep.subregions) {
            if (s.parent != r.box.name) continue;
            json sj = box_json(s.box);
            sj["cells"] = s.cells;
            sj["score"] = score_json(s.score);
            subs.push_back(sj);
        }
        j["subregions"] = subs;
        regions.push_back(j);
    }
    summary["regions"] = regions;
    summary["profiles"] = {{"lat", score_json(rep.lat_profile.score)},
                           {"lon_tropics", score_json(rep.lon_tropics.score)},
                           {"lon_extratropics", score_json(rep.lon_extratropics.score)}};
    summary["hemispheres"] = {{"north", score_json(rep.north)}, {"south", score_json(rep.south)}};
    {
        TextFile f(dir / "summary.json", written);
        f << summary.dump(2) << '\n';
    }

    auto svg = [&](const char* name, const std::string& body) {
        TextFile f(dir / "plots" / name, written);
        f << body;
    };
    {
        PlotSeries pts{"cells", "#1f77b4", {}, {}, true};
        for (std::size_t i = 0; i < rep.observed_annual.cells(); ++i) {
            if (!rep.observed_annual.valid[i] || !rep.predicted_annual.valid[i]) continue;
            pts.x.push_back(std::log1p(rep.observed_annual.values[i]));
            pts.y.push_back(std::log1p(rep.predicted_annual.values[i]));
        }
        svg("annual_mean_scatter.svg", svg_chart("Annual mean, log1p", "observed", "predicted", {pts}, true));
    }
    {
        static const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
        std::vector<PlotSeries> series;
        for (std::size_t k = 0; k < rep.regions.size(); ++k) {
            const auto& r = rep.regions[k];
            series.push_back({r.box.name, colors[k % 7], {r.observed.begin(), r.observed.end()}, {r.predicted.begin(), r.predicted.end()}, true});
        }
        svg("regional_monthly_scatter.svg", svg_chart("Regional monthly means", "observed", "predicted", series, true));
    }
    svg("zonal_lat.svg", profile_svg("Zonal mean by latitude", "latitude", rep.lat_profile));
    svg("zonal_lon_tropics.svg", profile_svg("Tropics, mean by longitude", "longitude", rep.lon_tropics));
    svg("zonal_lon_extratropics.svg", profile_svg("Extratropics, mean by longitude", "longitude", rep.lon_extratropics));
    {
        std::vector<double> months(12);
        for (std::size_t m = 0; m < 12; ++m) months[m] = static_cast<double>(m + 1);
        auto v = [](const MonthlySeries& s) { return std::vector<double>(s.values.begin(), s.values.end()); };
        svg("hemispheres.svg", svg_chart("Hemispheric monthly means", "month", "mean density",
                                         {{"observed north", "#1f77b4", months, v(rep.obs_north), false},
                                          {"predicted north", "#d62728", months, v(rep.pred_north), false},
                                          {"observed south", "#17becf", months, v(rep.obs_south), false},
                                          {"predicted south", "#ff7f0e", months, v(rep.pred_south), false}}));
    }
    return written;
}

DailyFields daily_fields(const Dataset& ds, int year, const std::string& channel) {
    std::optional<std::size_t> ch;
    if (!channel.empty()) {
        for (std::size_t c = 0; c < ds.channels().size(); ++c)
            if (ds.channels()[c].name == channel) ch = c;
        if (!ch) throw ConfigError("dataset has no channel '" + channel + "'");
    }
    DailyFields out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.date(i).year != year) continue;
        GridSample s = ds.sample(i);
        sanitize(s);
        Field f(s.height, s.width);
        for (std::size_t r = 0; r < s.height; ++r)
            for (std::size_t c = 0; c < s.width; ++c) {
                const std::size_t k = r * s.width + c;
                f.values[k] = ch ? s.predictor(*ch, r, c) : s.target[k];
                f.valid[k] = s.mask[k] != 0.0f;
            }
        out.dates.push_back(s.date);
        out.fields.push_back(std::move(f));
    }
    if (out.dates.empty()) throw DataError("dataset holds no day of " + std::to_string(year));
    return out;
}

}  // namespace flashcast
