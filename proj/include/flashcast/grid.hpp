#pragma once

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdio>
#include <string>

#include "flashcast/error.hpp"

namespace flashcast {

// Civil calendar day.
struct Date {
    int year = 1970;
    unsigned month = 1;
    unsigned day = 1;

    auto operator<=>(const Date&) const = default;

    std::chrono::year_month_day ymd() const {
        return std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day};
    }

    bool valid() const { return ymd().ok(); }

    // Days since 1970-01-01.
    long serial() const { return std::chrono::sys_days{ymd()}.time_since_epoch().count(); }

    static Date from_serial(long days) {
        const std::chrono::year_month_day d{std::chrono::sys_days{std::chrono::days{days}}};
        return {static_cast<int>(d.year()), static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day())};
    }

    Date next() const { return from_serial(serial() + 1); }

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", year, month, day);
        return buf;
    }

    static Date parse(const std::string& s) {
        Date d;
        char tail = 0;
        if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &d.year, &d.month, &d.day, &tail) != 3 ||
            !d.valid()) {
            throw DataError("invalid date '" + s + "' (expected YYYY-MM-DD)");
        }
        return d;
    }
};

inline bool is_leap_year(int year) { return std::chrono::year{year}.is_leap(); }
inline int days_in_year(int year) { return is_leap_year(year) ? 366 : 365; }

inline unsigned days_in_month(int year, unsigned month) {
    return static_cast<unsigned>((std::chrono::year{year} / std::chrono::month{month} / std::chrono::last).day());
}

// Regular lat/lon grid with cell-center convention; row 0 is the southernmost row.
struct GridSpec {
    double lat_min = -60.0;
    double lat_max = 60.0;
    double lon_min = -180.0;
    double lon_max = 180.0;
    double resolution = 1.0;

    static GridSpec global_band(double resolution) {
        GridSpec g;
        g.resolution = resolution;
        return g;
    }

    std::size_t height() const { return cells(lat_max - lat_min, "height"); }
    std::size_t width() const { return cells(lon_max - lon_min, "width"); }
    std::size_t cells() const { return height() * width(); }

    double lat_center(std::size_t row) const { return lat_min + (static_cast<double>(row) + 0.5) * resolution; }
    double lon_center(std::size_t col) const { return lon_min + (static_cast<double>(col) + 0.5) * resolution; }

    void validate() const {
        if (!(resolution > 0.0)) throw ConfigError("grid resolution must be positive");
        if (!(lat_min >= -90.0 && lat_max <= 90.0 && lat_min < lat_max)) throw ConfigError("grid latitude range invalid");
        if (!(lon_min < lon_max && lon_max - lon_min <= 360.0)) throw ConfigError("grid longitude range invalid");
        height();
        width();
    }

    bool operator==(const GridSpec&) const = default;

private:
    std::size_t cells(double extent, const char* axis) const {
        const double n = extent / resolution;
        const double r = std::round(n);
        if (r < 1.0 || std::abs(n - r) > 1e-9) {
            throw DimensionError(axis, std::string("grid extent not a whole number of cells along ") + axis);
        }
        return static_cast<std::size_t>(r);
    }
};

}  // namespace flashcast
