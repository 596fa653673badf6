#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "flashcast/ops.hpp"

namespace flashcast {

struct LossConfig {
    double lambda_cls = 1.0;
    double lambda_reg = 1.0;
    double pos_weight = 5.0;
    double quantile = 0.99;
    double anomaly_weight = 5.0;
    double epsilon = 1e-3;
    // Flash density above which a pixel is upweighted; computed once from the training split.
    double anomaly_threshold = std::numeric_limits<double>::infinity();
    // Take the quantile over lightning-positive pixels only instead of all valid pixels.
    bool threshold_positive_only = false;

    void validate() const {
        if (!(pos_weight > 0.0)) throw ConfigError("loss.pos_weight must be > 0");
        if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("loss.quantile must lie in (0, 1)");
        if (!(anomaly_weight >= 1.0)) throw ConfigError("loss.anomaly_weight must be >= 1");
        if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be > 0");
        if (!(lambda_cls >= 0.0) || !(lambda_reg >= 0.0)) throw ConfigError("loss weights must be >= 0");
        if (std::isnan(anomaly_threshold)) throw ConfigError("loss.anomaly_threshold is NaN");
    }
};

struct LossBreakdown {
    double total = 0.0;
    double cls = 0.0;
    double reg = 0.0;
    std::size_t valid = 0;
    std::size_t positive = 0;
    std::size_t anomaly = 0;
};

template <typename T>
struct ScalarLoss {
    Variable<T> var;        // (1, 1, 1, 1), differentiable
    double value = 0.0;     // same quantity in double
    double mask_sum = 0.0;
    std::size_t count = 0;  // positives for BCE, anomalies for log-MSE
};

template <typename T>
struct LossResult {
    Variable<T> total;
    LossBreakdown breakdown;
};

// o = 1 where y > 0. Masked-out pixels are not inspected.
template <typename T>
Tensor4<T> occurrence_target(const Tensor4<T>& y, const Tensor4<T>& mask) {
    require_same_shape(y.shape(), mask.shape(), "occurrence_target");
    Tensor4<T> o(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (mask[i] == T(0)) continue;
        if (!(y[i] >= T(0))) {
            throw DataError("negative or non-finite flash density " + std::to_string(static_cast<double>(y[i])) +
                            " at valid pixel " + std::to_string(i));
        }
        o[i] = y[i] > T(0) ? T(1) : T(0);
    }
    return o;
}

namespace detail {

template <typename T>
double mask_total(const Tensor4<T>& mask) {
    double s = 0.0;
    for (T v : mask.values()) s += static_cast<double>(v);
    if (!(s > 0.0)) throw DataError("empty mask: no valid pixels");
    return s;
}

}  // namespace detail

// Per-pixel pos_weight * o * softplus(-x) + (1 - o) * softplus(x), masked mean over sum(m).
template <typename T>
ScalarLoss<T> masked_bce(const Variable<T>& logits, const Tensor4<T>& target, const Tensor4<T>& mask,
                         double pos_weight) {
    require_same_shape(logits.shape(), target.shape(), "masked_bce target");
    require_same_shape(logits.shape(), mask.shape(), "masked_bce mask");
    const double msum = detail::mask_total(mask);
    const Tensor4<T>& x = logits.value();
    double acc = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = static_cast<double>(mask[i]);
        if (m == 0.0) continue;
        const double xi = static_cast<double>(x[i]);
        const double o = static_cast<double>(target[i]);
        if (o > 0.0) ++positives;
        acc += m * (pos_weight * o * scalar::softplus(-xi) + (1.0 - o) * scalar::softplus(xi));
    }
    const double value = acc / msum;
    ScalarLoss<T> out;
    out.value = value;
    out.mask_sum = msum;
    out.count = positives;
    out.var = make_result<T>(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(value)), "masked_bce", {logits},
                             [target, mask, msum, pos_weight](Node<T>& self) {
                                 auto& px = *self.parents[0];
                                 const double g = static_cast<double>(self.grad[0]) / msum;
                                 Tensor4<T> dx(px.value.shape());
                                 for (std::size_t i = 0; i < dx.size(); ++i) {
                                     const double m = static_cast<double>(mask[i]);
                                     if (m == 0.0) continue;
                                     const double s = scalar::sigmoid(static_cast<double>(px.value[i]));
                                     const double o = static_cast<double>(target[i]);
                                     dx[i] = static_cast<T>(g * m * (pos_weight * o * (s - 1.0) + (1.0 - o) * s));
                                 }
                                 px.accumulate(dx);
                             });
    return out;
}

// Masked mean over sum(m) of w * (log(pred + eps) - log(y + eps))^2, with w = anomaly_weight where
// y > anomaly_threshold and 1 otherwise.
template <typename T>
ScalarLoss<T> masked_log_mse(const Variable<T>& pred, const Tensor4<T>& target, const Tensor4<T>& mask,
                             const LossConfig& cfg) {
    require_same_shape(pred.shape(), target.shape(), "masked_log_mse target");
    require_same_shape(pred.shape(), mask.shape(), "masked_log_mse mask");
    const double msum = detail::mask_total(mask);
    const Tensor4<T>& p = pred.value();
    const double eps = cfg.epsilon;
    double acc = 0.0;
    std::size_t anomalies = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = static_cast<double>(mask[i]);
        if (m == 0.0) continue;
        const double yh = static_cast<double>(p[i]) + eps;
        const double yt = static_cast<double>(target[i]) + eps;
        if (!(yh > 0.0) || !(yt > 0.0) || !std::isfinite(yh) || !std::isfinite(yt)) {
            throw DataError("log-MSE argument not positive and finite at pixel " + std::to_string(i));
        }
        const bool anom = static_cast<double>(target[i]) > cfg.anomaly_threshold;
        if (anom) ++anomalies;
        const double w = anom ? cfg.anomaly_weight : 1.0;
        const double d = std::log(yh) - std::log(yt);
        acc += m * w * d * d;
    }
    const double value = acc / msum;
    ScalarLoss<T> out;
    out.value = value;
    out.mask_sum = msum;
    out.count = anomalies;
    out.var = make_result<T>(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(value)), "masked_log_mse", {pred},
                             [target, mask, msum, cfg](Node<T>& self) {
                                 auto& px = *self.parents[0];
                                 const double g = static_cast<double>(self.grad[0]) / msum;
                                 Tensor4<T> dx(px.value.shape());
                                 for (std::size_t i = 0; i < dx.size(); ++i) {
                                     const double m = static_cast<double>(mask[i]);
                                     if (m == 0.0) continue;
                                     const double yh = static_cast<double>(px.value[i]) + cfg.epsilon;
                                     const double yt = static_cast<double>(target[i]) + cfg.epsilon;
                                     const double w =
                                         static_cast<double>(target[i]) > cfg.anomaly_threshold ? cfg.anomaly_weight : 1.0;
                                     dx[i] = static_cast<T>(g * m * w * 2.0 * (std::log(yh) - std::log(yt)) / yh);
                                 }
                                 px.accumulate(dx);
                             });
    return out;
}

// lambda_cls * L_cls + lambda_reg * L_reg with the full breakdown.
template <typename T>
LossResult<T> total_loss(const Variable<T>& logits, const Variable<T>& magnitudes, const Tensor4<T>& y,
                         const Tensor4<T>& mask, const LossConfig& cfg) {
    cfg.validate();
    const Tensor4<T> occurrence = occurrence_target(y, mask);
    const ScalarLoss<T> cls = masked_bce(logits, occurrence, mask, cfg.pos_weight);
    const ScalarLoss<T> reg = masked_log_mse(magnitudes, y, mask, cfg);
    LossResult<T> out;
    out.breakdown.cls = cls.value;
    out.breakdown.reg = reg.value;
    out.breakdown.total = cfg.lambda_cls * cls.value + cfg.lambda_reg * reg.value;
    out.breakdown.valid = static_cast<std::size_t>(cls.mask_sum);
    out.breakdown.positive = cls.count;
    out.breakdown.anomaly = reg.count;
    const double lc = cfg.lambda_cls;
    const double lr = cfg.lambda_reg;
    out.total = make_result<T>(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(out.breakdown.total)), "total_loss",
                               {cls.var, reg.var}, [lc, lr](Node<T>& self) {
                                   const double g = static_cast<double>(self.grad[0]);
                                   self.parents[0]->accumulate(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(lc * g)));
                                   self.parents[1]->accumulate(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(lr * g)));
                               });
    return out;
}

// q-quantile with linear interpolation between order statistics (position (n - 1) * q).
template <typename V>
double quantile_linear(std::vector<V> values, double q) {
    if (values.empty()) throw DataError("quantile of an empty set");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile must lie in [0, 1]");
    const double pos = static_cast<double>(values.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double a = static_cast<double>(values[lo]);
    if (frac == 0.0 || lo + 1 >= values.size()) return a;
    const double b = static_cast<double>(*std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end()));
    return a + frac * (b - a);
}

// Collects valid-pixel targets across the training split, then yields the anomaly threshold.
class AnomalyThresholdAccumulator {
public:
    explicit AnomalyThresholdAccumulator(bool positive_only = false) : positive_only_(positive_only) {}

    void add(double y) {
        if (positive_only_ && !(y > 0.0)) return;
        values_.push_back(y);
    }

    template <typename T>
    void add_masked(std::span<const T> y, std::span<const T> mask) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (mask[i] != T(0)) add(static_cast<double>(y[i]));
        }
    }

    std::size_t count() const noexcept { return values_.size(); }

    double finish(double q) const {
        if (values_.empty()) throw DataError("anomaly threshold: no valid training pixels");
        return quantile_linear(values_, q);
    }

private:
    bool positive_only_;
    std::vector<double> values_;
};

inline double anomaly_threshold(std::span<const double> values, double q) {
    if (values.empty()) throw DataError("anomaly threshold: no valid training pixels");
    return quantile_linear(std::vector<double>(values.begin(), values.end()), q);
}

}  // namespace flashcast
