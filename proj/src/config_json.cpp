#include "flashcast/config_json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flashcast {

StrictObject::StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
}

const Json* StrictObject::sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.push_back(key);
    return &j_.at(key);
}

void StrictObject::finish() const {
    for (const auto& [key, value] : j_.items()) {
        if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
            throw ConfigError("unknown key '" + where_ + "." + key + "'");
        }
    }
}

namespace {

std::array<std::size_t, 4> read4(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) throw ConfigError(where + " must be an array of 4 integers");
    std::array<std::size_t, 4> out{};
    for (std::size_t i = 0; i < 4; ++i) {
        if (!j[i].is_number_unsigned()) throw ConfigError(where + " must contain non-negative integers");
        out[i] = j[i].get<std::size_t>();
    }
    return out;
}

YearRange read_years(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
        throw ConfigError(where + " must be [first_year, last_year]");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

Json to_json(const ModelConfig& c) {
    return {{"in_channels", c.in_channels},
            {"stage_widths", c.stage_widths},
            {"stage_depths", c.stage_depths},
            {"se_enabled", c.se_enabled},
            {"se_reduction", c.se_reduction},
            {"layer_scale", c.layer_scale},
            {"layer_scale_init", c.layer_scale_init},
            {"drop_path_rate", c.drop_path_rate},
            {"resolution_preserving", c.resolution_preserving},
            {"band_kernel", c.band_kernel},
            {"branch_denominator", c.branch_denominator},
            {"pointwise_groups", c.pointwise_groups},
            {"norm_eps", c.norm_eps}};
}

void from_json(const Json& j, ModelConfig& c, const std::string& where) {
    StrictObject o(j, where);
    o.read("in_channels", c.in_channels);
    if (const Json* w = o.sub("stage_widths")) c.stage_widths = read4(*w, where + ".stage_widths");
    if (const Json* d = o.sub("stage_depths")) c.stage_depths = read4(*d, where + ".stage_depths");
    o.read("se_enabled", c.se_enabled);
    o.read("se_reduction", c.se_reduction);
    o.read("layer_scale", c.layer_scale);
    o.read("layer_scale_init", c.layer_scale_init);
    o.read("drop_path_rate", c.drop_path_rate);
    o.read("resolution_preserving", c.resolution_preserving);
    o.read("band_kernel", c.band_kernel);
    o.read("branch_denominator", c.branch_denominator);
    o.read("pointwise_groups", c.pointwise_groups);
    o.read("norm_eps", c.norm_eps);
    o.finish();
    c.validate();
}

Json to_json(const OptimConfig& c) {
    return {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eps", c.eps},
            {"weight_decay", c.weight_decay},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"max_steps", c.max_steps},
            {"cosine_schedule", c.cosine_schedule},
            {"min_lr", c.min_lr},
            {"clip_grad_norm", c.clip_grad_norm}};
}

void from_json(const Json& j, OptimConfig& c, const std::string& where) {
    StrictObject o(j, where);
    o.read("lr", c.lr);
    o.read("beta1", c.beta1);
    o.read("beta2", c.beta2);
    o.read("eps", c.eps);
    o.read("weight_decay", c.weight_decay);
    if (o.has("epochs")) {
        long long e = 0;
        o.read("epochs", e);
        if (e < 1) throw ConfigError(where + ".epochs must be >= 1");
        c.epochs = static_cast<std::size_t>(e);
    }
    o.read("batch_size", c.batch_size);
    o.read("max_steps", c.max_steps);
    o.read("cosine_schedule", c.cosine_schedule);
    o.read("min_lr", c.min_lr);
    o.read("clip_grad_norm", c.clip_grad_norm);
    o.finish();
    c.validate();
}

Json to_json(const LossConfig& c) {
    Json j{{"lambda_cls", c.lambda_cls},         {"lambda_reg", c.lambda_reg},
           {"pos_weight", c.pos_weight},         {"quantile", c.quantile},
           {"anomaly_weight", c.anomaly_weight}, {"epsilon", c.epsilon},
           {"threshold_positive_only", c.threshold_positive_only}};
    j["anomaly_threshold"] = std::isfinite(c.anomaly_threshold) ? Json(c.anomaly_threshold) : Json(nullptr);
    return j;
}

void from_json(const Json& j, LossConfig& c, const std::string& where) {
    StrictObject o(j, where);
    o.read("lambda_cls", c.lambda_cls);
    o.read("lambda_reg", c.lambda_reg);
    o.read("pos_weight", c.pos_weight);
    o.read("quantile", c.quantile);
    o.read("anomaly_weight", c.anomaly_weight);
    o.read("epsilon", c.epsilon);
    o.read("threshold_positive_only", c.threshold_positive_only);
    if (const Json* t = o.sub("anomaly_threshold")) {
        if (t->is_null()) c.anomaly_threshold = std::numeric_limits<double>::infinity();
        else if (t->is_number()) c.anomaly_threshold = t->get<double>();
        else throw ConfigError(where + ".anomaly_threshold must be a number or null");
    }
    o.finish();
    c.validate();
}

Json to_json(const SplitConfig& c) {
    return {{"train", {c.train.first, c.train.last}},
            {"val", {c.val.first, c.val.last}},
            {"test", {c.test.first, c.test.last}}};
}

void from_json(const Json& j, SplitConfig& c, const std::string& where) {
    StrictObject o(j, where);
    if (const Json* t = o.sub("train")) c.train = read_years(*t, where + ".train");
    if (const Json* v = o.sub("val")) c.val = read_years(*v, where + ".val");
    if (const Json* t = o.sub("test")) c.test = read_years(*t, where + ".test");
    o.finish();
    c.validate();
}

Json to_json(const GridSpec& g) {
    return {{"lat_min", g.lat_min},
            {"lat_max", g.lat_max},
            {"lon_min", g.lon_min},
            {"lon_max", g.lon_max},
            {"resolution", g.resolution}};
}

void from_json(const Json& j, GridSpec& g, const std::string& where) {
    StrictObject o(j, where);
    o.read("lat_min", g.lat_min);
    o.read("lat_max", g.lat_max);
    o.read("lon_min", g.lon_min);
    o.read("lon_max", g.lon_max);
    o.read("resolution", g.resolution);
    o.finish();
    g.validate();
}

Json to_json(const SyntheticConfig& c) {
    return {{"grid", to_json(c.grid)},
            {"first_year", c.first_year},
            {"last_year", c.last_year},
            {"seed", c.seed},
            {"target_noise", c.target_noise},
            {"predictor_noise", c.predictor_noise},
            {"extra_channel_mean", c.extra_channel_mean},
            {"days_per_month", c.days_per_month}};
}

void from_json(const Json& j, SyntheticConfig& c, const std::string& where) {
    StrictObject o(j, where);
    if (const Json* g = o.sub("grid")) from_json(*g, c.grid, where + ".grid");
    o.read("first_year", c.first_year);
    o.read("last_year", c.last_year);
    o.read("seed", c.seed);
    o.read("target_noise", c.target_noise);
    o.read("predictor_noise", c.predictor_noise);
    o.read("extra_channel_mean", c.extra_channel_mean);
    o.read("days_per_month", c.days_per_month);
    o.finish();
    c.validate();
}

}  // namespace flashcast
