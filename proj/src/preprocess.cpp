#include <functional>
#include "flashcast/preprocess.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"
#include "flashcast/loss.hpp"

namespace flashcast {

using nlohmann::json;

void SplitConfig::validate() const {
    for (const YearRange* r : {&train, &val, &test}) {
        if (r->first > r->last) throw ConfigError("split year range is empty");
    }
    auto overlap = [](const YearRange& a, const YearRange& b) { return a.first <= b.last && b.first <= a.last; };
    if (overlap(train, val) || overlap(train, test) || overlap(val, test)) {
        throw ConfigError("train, val and test year ranges must be disjoint");
    }
}

SplitIndices split_by_year(const std::vector<Date>& dates, const SplitConfig& cfg) {
    cfg.validate();
    SplitIndices out;
    for (std::size_t i = 0; i < dates.size(); ++i) {
        const int y = dates[i].year;
        if (cfg.train.contains(y)) out.train.push_back(i);
        else if (cfg.val.contains(y)) out.val.push_back(i);
        else if (cfg.test.contains(y)) out.test.push_back(i);
        else throw DataError("date " + dates[i].str() + " falls outside the configured train/val/test years");
    }
    return out;
}

void NormStats::validate() const {
    for (const auto& c : channels) {
        if (!(c.std > 0.0) || !std::isfinite(c.std) || !std::isfinite(c.mean)) {
            throw DataError("channel '" + c.name + "' has zero or non-finite variance over the training split");
        }
    }
}

void ChannelMoments::add_sample(const GridSample& s) {
    const std::size_t n = s.cells();
    for (std::size_t c = 0; c < s.channels; ++c) {
        const float* p = s.predictors.data() + c * n;
        for (std::size_t i = 0; i < n; ++i) {
            if (s.mask[i] != 0.0f) add(c, static_cast<double>(p[i]));
        }
    }
}

namespace {

using Fetch = std::function<GridSample(std::size_t)>;

TrainingStatistics statistics_pass(const Fetch& fetch, std::size_t count, const std::vector<ChannelInfo>& channels,
                                   double quantile, bool positive_only, bool with_targets) {
    if (count == 0) throw DataError("training split is empty");
    ChannelMoments moments(channels.size());
    std::vector<float> targets;
    std::set<int> years;
    for (std::size_t k = 0; k < count; ++k) {
        GridSample s = fetch(k);
        if (s.channels != channels.size()) {
            throw DimensionError("channel", "sample has " + std::to_string(s.channels) + " channels, expected " +
                                                std::to_string(channels.size()));
        }
        sanitize(s);
        years.insert(s.date.year);
        moments.add_sample(s);
        if (!with_targets) continue;
        for (std::size_t i = 0; i < s.cells(); ++i) {
            if (s.mask[i] == 0.0f) continue;
            if (positive_only && !(s.target[i] > 0.0f)) continue;
            targets.push_back(s.target[i]);
        }
    }
    TrainingStatistics out;
    for (std::size_t c = 0; c < channels.size(); ++c) {
        if (moments.count(c) == 0) throw DataError("no valid training pixels");
        out.norm.channels.push_back({channels[c].name, moments.mean(c), std::sqrt(moments.variance(c)), moments.count(c)});
    }
    out.norm.validate();
    out.years.assign(years.begin(), years.end());
    out.days = count;
    out.quantile = quantile;
    out.positive_only = positive_only;
    if (!with_targets) return out;
    if (targets.empty()) throw DataError("anomaly threshold: no valid training pixels");
    out.target_pixels = targets.size();
    out.anomaly_threshold = quantile_linear(std::move(targets), quantile);
    return out;
}

}  // namespace

TrainingStatistics compute_training_statistics(const Dataset& ds, const std::vector<std::size_t>& days, double quantile,
                                               bool positive_only) {
    return statistics_pass([&](std::size_t k) { return ds.sample(days[k]); }, days.size(), ds.channels(), quantile,
                           positive_only, true);
}

TrainingStatistics compute_training_statistics(const std::vector<GridSample>& samples,
                                               const std::vector<ChannelInfo>& channels, double quantile,
                                               bool positive_only) {
    return statistics_pass([&](std::size_t k) { return samples[k]; }, samples.size(), channels, quantile,
                           positive_only, true);
}

NormStats compute_norm_stats(const Dataset& ds, const std::vector<std::size_t>& days) {
    return statistics_pass([&](std::size_t k) { return ds.sample(days[k]); }, days.size(), ds.channels(), 0.0, false,
                           false)
        .norm;
}

std::string statistics_to_json(const TrainingStatistics& s) {
    json j;
    j["channels"] = json::array();
    for (const auto& c : s.norm.channels) {
        j["channels"].push_back({{"name", c.name}, {"mean", c.mean}, {"std", c.std}, {"count", c.count}});
    }
    j["anomaly_threshold"] = s.anomaly_threshold;
    j["quantile"] = s.quantile;
    j["threshold_positive_only"] = s.positive_only;
    j["target_pixels"] = s.target_pixels;
    j["train_years"] = s.years;
    j["train_days"] = s.days;
    return j.dump(2);
}

TrainingStatistics statistics_from_json(const std::string& text, const std::string& source) {
    try {
        const json j = json::parse(text);
        TrainingStatistics s;
        for (const auto& c : j.at("channels")) {
            s.norm.channels.push_back({c.at("name").get<std::string>(), c.at("mean").get<double>(),
                                       c.at("std").get<double>(), c.value("count", std::uint64_t{0})});
        }
        s.anomaly_threshold = j.at("anomaly_threshold").get<double>();
        s.quantile = j.value("quantile", 0.99);
        s.positive_only = j.value("threshold_positive_only", false);
        s.target_pixels = j.value("target_pixels", std::uint64_t{0});
        s.years = j.value("train_years", std::vector<int>{});
        s.days = j.value("train_days", std::size_t{0});
        s.norm.validate();
        return s;
    } catch (const json::exception& e) {
        throw DataError("malformed statistics in " + source + ": " + e.what());
    }
}

void save_statistics(const std::filesystem::path& path, const TrainingStatistics& s) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << statistics_to_json(s) << '\n';
    if (!out) throw DataError("write failed on " + path.string());
}

TrainingStatistics load_statistics(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read statistics file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return statistics_from_json(text, path.string());
}

void normalize_into(const GridSample& s, const NormStats& stats, Batch& batch, std::size_t b) {
    const std::size_t n = s.cells();
    if (stats.size() != s.channels) {
        throw DimensionError("channels", "statistics cover " + std::to_string(stats.size()) + " channels, sample has " +
                                             std::to_string(s.channels));
    }
    const auto xs = batch.x.shape();
    if (xs.c != s.channels || xs.h != s.height || xs.w != s.width) {
        throw DimensionError("cells", "sample " + s.date.str() + " does not fit the batch layout");
    }
    std::vector<bool> bad(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        bool b_ = !std::isfinite(s.target[i]);
        for (std::size_t c = 0; c < s.channels && !b_; ++c) b_ = !std::isfinite(s.predictors[c * n + i]);
        bad[i] = b_;
    }
    float* x = batch.x.data() + b * s.channels * n;
    for (std::size_t c = 0; c < s.channels; ++c) {
        const double mean = stats.channels[c].mean;
        const double inv = 1.0 / stats.channels[c].std;
        for (std::size_t i = 0; i < n; ++i) {
            x[c * n + i] = bad[i] ? 0.0f : static_cast<float>((static_cast<double>(s.predictors[c * n + i]) - mean) * inv);
        }
    }
    float* y = batch.y.data() + b * n;
    float* m = batch.mask.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = bad[i] ? 0.0f : s.target[i];
        m[i] = bad[i] ? 0.0f : s.mask[i];
    }
    if (batch.dates.size() <= b) batch.dates.resize(b + 1);
    batch.dates[b] = s.date;
}

Batch make_batch(const std::vector<GridSample>& samples, const NormStats& stats) {
    if (samples.empty()) throw DataError("empty batch");
    const auto& f = samples.front();
    Batch batch{Tensor4<float>({samples.size(), f.channels, f.height, f.width}),
                Tensor4<float>({samples.size(), 1, f.height, f.width}),
                Tensor4<float>({samples.size(), 1, f.height, f.width}),
                {}};
    for (std::size_t b = 0; b < samples.size(); ++b) normalize_into(samples[b], stats, batch, b);
    return batch;
}

Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices, const NormStats& stats) {
    std::vector<GridSample> samples;
    samples.reserve(indices.size());
    for (std::size_t i : indices) samples.push_back(ds.sample(i));
    return make_batch(samples, stats);
}

}  // namespace flashcast
