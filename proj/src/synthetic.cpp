#include "flashcast/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "flashcast/rng.hpp"

namespace flashcast {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kModes = 6;

// Low-wavenumber field on the grid: sum of separable cosine modes, about unit variance.
struct SmoothField {
    std::array<double, kModes> amp{}, kx{}, ky{}, px{}, py{};

    static SmoothField random(Rng& rng) {
        SmoothField f;
        for (std::size_t m = 0; m < kModes; ++m) {
            f.amp[m] = standard_normal(rng);
            f.kx[m] = static_cast<double>(1 + uniform_index(rng, 3));
            f.ky[m] = static_cast<double>(1 + uniform_index(rng, 3));
            f.px[m] = 2.0 * kPi * uniform01(rng);
            f.py[m] = 2.0 * kPi * uniform01(rng);
        }
        return f;
    }

    // Red-noise evolution of the amplitudes; wavenumbers and phases stay fixed.
    void step(Rng& rng, double rho) {
        const double s = std::sqrt(1.0 - rho * rho);
        for (auto& a : amp) a = rho * a + s * standard_normal(rng);
    }

    double at(double lat_frac, double lon_rad) const {
        double v = 0.0;
        for (std::size_t m = 0; m < kModes; ++m) {
            v += amp[m] * std::cos(kx[m] * lon_rad + px[m]) * std::cos(ky[m] * kPi * lat_frac + py[m]);
        }
        return v * 2.0 / std::sqrt(static_cast<double>(kModes));
    }
};

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

}  // namespace

void SyntheticConfig::validate() const {
    grid.validate();
    if (first_year > last_year) throw ConfigError("synthetic: first_year after last_year");
    if (!(target_noise >= 0.0) || !(predictor_noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
    if (days_per_month > 31) throw ConfigError("synthetic: days_per_month must be <= 31");
}

std::vector<Date> synthetic_dates(const SyntheticConfig& cfg, int year) {
    std::vector<Date> out;
    for (unsigned m = 1; m <= 12; ++m) {
        const unsigned n = days_in_month(year, m);
        const unsigned keep = cfg.days_per_month == 0 ? n : std::min(n, cfg.days_per_month);
        for (unsigned d = 1; d <= keep; ++d) out.push_back({year, m, d});
    }
    return out;
}

std::vector<GridSample> generate_synthetic_year(const SyntheticConfig& cfg, int year) {
    cfg.validate();
    const GridSpec& g = cfg.grid;
    const std::size_t h = g.height(), w = g.width(), n = h * w;
    constexpr std::size_t channels = 9;

    // Static surface pattern, identical in every year.
    Rng static_rng = derive_rng(cfg.seed, 100);
    const SmoothField land = SmoothField::random(static_rng);

    Rng rng = derive_rng(cfg.seed, 200, static_cast<std::uint64_t>(year));
    std::array<SmoothField, 4> weather{SmoothField::random(rng), SmoothField::random(rng), SmoothField::random(rng),
                                       SmoothField::random(rng)};

    std::vector<double> lat_frac(h), lat_rad(h), lon_rad(w);
    for (std::size_t i = 0; i < h; ++i) {
        lat_frac[i] = (g.lat_center(i) - g.lat_min) / (g.lat_max - g.lat_min);
        lat_rad[i] = g.lat_center(i) * kPi / 180.0;
    }
    for (std::size_t j = 0; j < w; ++j) lon_rad[j] = g.lon_center(j) * kPi / 180.0;

    const std::vector<Date> keep = synthetic_dates(cfg, year);
    std::vector<GridSample> out;
    out.reserve(keep.size());
    std::size_t next = 0;
    const Date first{year, 1, 1};
    for (int doy = 0; doy < days_in_year(year) && next < keep.size(); ++doy) {
        for (auto& f : weather) f.step(rng, 0.7);
        const Date date = Date::from_serial(first.serial() + doy);
        if (date != keep[next]) continue;
        ++next;
        const double season = std::cos(2.0 * kPi * (static_cast<double>(doy) - 196.0) / 365.25);
        GridSample s = GridSample::zeros(date, channels, h, w);
        auto noise = [&] { return cfg.predictor_noise * standard_normal(rng); };
        for (std::size_t i = 0; i < h; ++i) {
            // Summer half of the year in each hemisphere.
            const double hemi = std::sin(lat_rad[i]) * season;
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t p = i * w + j;
                const double surface = land.at(lat_frac[i], lon_rad[j]);
                const double u1 = 0.6 * surface + 0.6 * hemi + 0.5 * weather[0].at(lat_frac[i], lon_rad[j]);
                const double u2 = weather[1].at(lat_frac[i], lon_rad[j]);
                const double u3 = 0.7 * std::cos(1.5 * lat_rad[i]) + 0.5 * weather[2].at(lat_frac[i], lon_rad[j]);
                const double u4 = weather[3].at(lat_frac[i], lon_rad[j]);

                const double t2m = 285.0 + 10.0 * u1 + 8.0 * u3 + 10.0 * noise();
                s.predictors[0 * n + p] = static_cast<float>(800.0 * std::max(surface, 0.0) + 10.0 * surface);
                s.predictors[1 * n + p] = static_cast<float>(t2m);
                s.predictors[2 * n + p] = static_cast<float>(t2m - 8.0 + 4.0 * u2 + 4.0 * noise());
                s.predictors[3 * n + p] = static_cast<float>(1.0 + 0.05 * u3 + 0.05 * noise());
                s.predictors[4 * n + p] = static_cast<float>(-0.2 * u4 + 0.2 * noise());
                s.predictors[5 * n + p] = static_cast<float>(55.0 + 1.5 * u3 + 0.5 * u1 + 1.5 * noise());
                s.predictors[6 * n + p] = static_cast<float>(32.0 + 1.0 * u3 - 0.3 * u2 + noise());
                s.predictors[7 * n + p] = static_cast<float>(400.0 * softplus(u1 + u2) + 400.0 * noise());
                s.predictors[8 * n + p] = static_cast<float>(cfg.extra_channel_mean + standard_normal(rng));

                const double convective = 0.9 * u1 + 0.6 * u2 + 0.4 * u4 + 0.3 * u2 * u4 - 0.5;
                double y = 0.0;
                if (convective > 0.0) {
                    y = 15.0 * std::expm1(1.2 * convective) * std::exp(cfg.target_noise * standard_normal(rng));
                }
                s.target[p] = static_cast<float>(y);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticConfig& cfg,
                                                           const std::string& prefix) {
    cfg.validate();
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (int year = cfg.first_year; year <= cfg.last_year; ++year) {
        MgridHeader header;
        header.grid = cfg.grid;
        header.channels = default_channels();
        header.dates = synthetic_dates(cfg, year);
        const auto path = dir / (prefix + std::to_string(year) + ".mgrid");
        MgridWriter writer(path, header);
        for (const auto& s : generate_synthetic_year(cfg, year)) writer.write(s);
        writer.finish();
        paths.push_back(path);
    }
    return paths;
}

}  // namespace flashcast
