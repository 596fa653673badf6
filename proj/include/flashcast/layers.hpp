#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flashcast/ops.hpp"

namespace flashcast {

enum class ParamRole { Weight, Bias, NormAffine, LayerScale };

// Roles excluded from decoupled weight decay.
inline bool decays(ParamRole role) { return role == ParamRole::Weight || role == ParamRole::Bias; }

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Variable<T>& var, ParamRole role)>;

// Per-channel vectors are stored as (1, C, 1, 1).
inline Shape4 channel_shape(std::size_t c) { return {1, c, 1, 1}; }

// He-style truncated normal, std = sqrt(2 / fan_in).
template <typename T>
Variable<T> init_conv_weight(Rng& rng, Shape4 kernel) {
    Tensor4<T> w(kernel);
    const std::size_t fan_in = kernel.c * kernel.h * kernel.w;
    const double stddev = fan_in > 0 ? std::sqrt(2.0 / static_cast<double>(fan_in)) : 0.0;
    for (auto& v : w.values()) v = static_cast<T>(truncated_normal(rng, stddev));
    return Variable<T>::leaf(std::move(w), true);
}

template <typename T>
Variable<T> init_constant(Shape4 shape, double value) {
    return Variable<T>::leaf(Tensor4<T>(shape, static_cast<T>(value)), true);
}

// Channel counts of the four mixer branches, in application order.
struct InceptionSplit {
    std::size_t h_band = 0;
    std::size_t v_band = 0;
    std::size_t square = 0;
    std::size_t identity = 0;

    std::size_t total() const { return h_band + v_band + square + identity; }

    // Each conv branch takes floor(C / denominator) channels; identity keeps the remainder.
    static InceptionSplit for_channels(std::size_t channels, std::size_t denominator = 8) {
        const std::size_t gc = channels / denominator;
        return {gc, gc, gc, channels - 3 * gc};
    }
};

template <typename T>
struct InceptionDWParams {
    InceptionSplit split;
    std::size_t band_kernel = 11;
    std::size_t square_kernel = 3;
    Variable<T> h_weight, h_bias;    // (c_h, 1, 1, k)
    Variable<T> v_weight, v_bias;    // (c_v, 1, k, 1)
    Variable<T> sq_weight, sq_bias;  // (c_sq, 1, 3, 3)

    static InceptionDWParams init(Rng& rng, InceptionSplit split, std::size_t band_kernel) {
        InceptionDWParams p;
        p.split = split;
        p.band_kernel = band_kernel;
        p.h_weight = init_conv_weight<T>(rng, {split.h_band, 1, 1, band_kernel});
        p.h_bias = init_constant<T>(channel_shape(split.h_band), 0.0);
        p.v_weight = init_conv_weight<T>(rng, {split.v_band, 1, band_kernel, 1});
        p.v_bias = init_constant<T>(channel_shape(split.v_band), 0.0);
        p.sq_weight = init_conv_weight<T>(rng, {split.square, 1, p.square_kernel, p.square_kernel});
        p.sq_bias = init_constant<T>(channel_shape(split.square), 0.0);
        return p;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        if (split.h_band > 0) {
            f(prefix + ".h_band.weight", h_weight, ParamRole::Weight);
            f(prefix + ".h_band.bias", h_bias, ParamRole::Bias);
        }
        if (split.v_band > 0) {
            f(prefix + ".v_band.weight", v_weight, ParamRole::Weight);
            f(prefix + ".v_band.bias", v_bias, ParamRole::Bias);
        }
        if (split.square > 0) {
            f(prefix + ".square.weight", sq_weight, ParamRole::Weight);
            f(prefix + ".square.bias", sq_bias, ParamRole::Bias);
        }
    }
};

// Channels split into (h-band, v-band, square, identity); each conv branch is depthwise with
// same padding; results concatenated in the same order.
template <typename T>
Variable<T> inception_dwconv(const Variable<T>& x, const InceptionDWParams<T>& p) {
    const InceptionSplit& s = p.split;
    if (s.total() != x.shape().c) {
        throw DimensionError("channels", "mixer branches cover " + std::to_string(s.total()) +
                                             " channels, input has " + std::to_string(x.shape().c));
    }
    if (s.h_band + s.v_band + s.square == 0) return x;
    auto parts = split_channels(x, {s.h_band, s.v_band, s.square, s.identity});
    const std::size_t k = p.band_kernel;
    if (s.h_band > 0) parts[0] = conv2d(parts[0], p.h_weight, std::optional{p.h_bias}, Conv2dOptions::same(1, k, s.h_band));
    if (s.v_band > 0) parts[1] = conv2d(parts[1], p.v_weight, std::optional{p.v_bias}, Conv2dOptions::same(k, 1, s.v_band));
    if (s.square > 0) {
        parts[2] = conv2d(parts[2], p.sq_weight, std::optional{p.sq_bias},
                          Conv2dOptions::same(p.square_kernel, p.square_kernel, s.square));
    }
    return concat_channels(parts);
}

// 1x1 convolution applied independently within each of `groups` channel groups.
template <typename T>
Variable<T> pointwise_group_conv(const Variable<T>& x, const Variable<T>& weights,
                                 const std::optional<Variable<T>>& bias, std::size_t groups) {
    if (groups == 0 || x.shape().c % groups != 0) {
        throw DimensionError("groups", std::to_string(x.shape().c) + " channels not divisible into " +
                                           std::to_string(groups) + " groups");
    }
    if (weights.shape().h != 1 || weights.shape().w != 1) {
        throw DimensionError("kernel", "pointwise weights must be 1x1, got " + weights.shape().str());
    }
    Conv2dOptions opt;
    opt.groups = groups;
    return conv2d(x, weights, bias, opt);
}

template <typename T>
struct SEParams {
    std::size_t reduction = 16;
    Variable<T> w1;  // (C_reduced, C, 1, 1)
    Variable<T> w2;  // (C, C_reduced, 1, 1)

    static std::size_t reduced_channels(std::size_t channels, std::size_t reduction) {
        return std::max<std::size_t>(1, channels / reduction);
    }

    static SEParams init(Rng& rng, std::size_t channels, std::size_t reduction) {
        SEParams p;
        p.reduction = reduction;
        const std::size_t cr = reduced_channels(channels, reduction);
        p.w1 = init_conv_weight<T>(rng, {cr, channels, 1, 1});
        p.w2 = init_conv_weight<T>(rng, {channels, cr, 1, 1});
        return p;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".w1", w1, ParamRole::Weight);
        f(prefix + ".w2", w2, ParamRole::Weight);
    }
};

// Squeeze (global mean), excite e = sigmoid(W2 relu(W1 s)), rescale each channel by e_c.
template <typename T>
Variable<T> se_block(const Variable<T>& x, const SEParams<T>& p) {
    const Variable<T> squeezed = global_avg_pool(x);
    const Variable<T> hidden = relu(conv2d(squeezed, p.w1, std::optional<Variable<T>>{}));
    const Variable<T> excitation = sigmoid(conv2d(hidden, p.w2, std::optional<Variable<T>>{}));
    return channel_mul(x, excitation);
}

template <typename T>
struct BlockParams {
    std::size_t channels = 0;
    std::size_t pointwise_groups = 1;
    double drop_path = 0.0;
    double norm_eps = 1e-6;
    Variable<T> norm_scale, norm_shift;
    InceptionDWParams<T> mixer;
    Variable<T> expand_weight, expand_bias;  // (4C, C/g, 1, 1)
    Variable<T> reduce_weight, reduce_bias;  // (C, 4C/g, 1, 1)
    std::optional<SEParams<T>> se;
    std::optional<Variable<T>> gamma;  // (1, C, 1, 1)

    static constexpr std::size_t kExpansion = 4;

    struct Options {
        std::size_t band_kernel = 11;
        std::size_t branch_denominator = 8;
        std::size_t pointwise_groups = 1;
        bool se_enabled = false;
        std::size_t se_reduction = 16;
        bool layer_scale = true;
        double layer_scale_init = 1e-6;
        double drop_path = 0.0;
        double norm_eps = 1e-6;
    };

    static BlockParams init(Rng& rng, std::size_t channels, const Options& o) {
        const std::size_t hidden = kExpansion * channels;
        if (channels % o.pointwise_groups != 0) {
            throw DimensionError("groups", "block width " + std::to_string(channels) + " not divisible by " +
                                               std::to_string(o.pointwise_groups) + " pointwise groups");
        }
        BlockParams p;
        p.channels = channels;
        p.pointwise_groups = o.pointwise_groups;
        p.drop_path = o.drop_path;
        p.norm_eps = o.norm_eps;
        p.norm_scale = init_constant<T>(channel_shape(channels), 1.0);
        p.norm_shift = init_constant<T>(channel_shape(channels), 0.0);
        p.mixer = InceptionDWParams<T>::init(rng, InceptionSplit::for_channels(channels, o.branch_denominator),
                                             o.band_kernel);
        p.expand_weight = init_conv_weight<T>(rng, {hidden, channels / o.pointwise_groups, 1, 1});
        p.expand_bias = init_constant<T>(channel_shape(hidden), 0.0);
        p.reduce_weight = init_conv_weight<T>(rng, {channels, hidden / o.pointwise_groups, 1, 1});
        p.reduce_bias = init_constant<T>(channel_shape(channels), 0.0);
        if (o.se_enabled) p.se = SEParams<T>::init(rng, channels, o.se_reduction);
        if (o.layer_scale) p.gamma = init_constant<T>(channel_shape(channels), o.layer_scale_init);
        return p;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".norm.scale", norm_scale, ParamRole::NormAffine);
        f(prefix + ".norm.shift", norm_shift, ParamRole::NormAffine);
        mixer.visit(prefix + ".mixer", f);
        f(prefix + ".expand.weight", expand_weight, ParamRole::Weight);
        f(prefix + ".expand.bias", expand_bias, ParamRole::Bias);
        f(prefix + ".reduce.weight", reduce_weight, ParamRole::Weight);
        f(prefix + ".reduce.bias", reduce_bias, ParamRole::Bias);
        if (se) se->visit(prefix + ".se", f);
        if (gamma) f(prefix + ".gamma", *gamma, ParamRole::LayerScale);
    }
};

// Pre-norm residual block:
// x + drop_path(gamma * se(reduce(gelu(expand(mixer(norm(x))))))).
template <typename T>
Variable<T> residual_block(const Variable<T>& x, const BlockParams<T>& p, bool training, Rng& rng) {
    if (x.shape().c != p.channels) {
        throw DimensionError("channels", "block expects " + std::to_string(p.channels) + " channels, got " +
                                             std::to_string(x.shape().c));
    }
    Variable<T> h = layer_norm_cf(x, p.norm_scale, p.norm_shift, p.norm_eps);
    h = inception_dwconv(h, p.mixer);
    h = pointwise_group_conv(h, p.expand_weight, std::optional{p.expand_bias}, p.pointwise_groups);
    h = gelu(h);
    h = pointwise_group_conv(h, p.reduce_weight, std::optional{p.reduce_bias}, p.pointwise_groups);
    if (p.se) h = se_block(h, *p.se);
    if (p.gamma) h = channel_mul(h, *p.gamma);
    h = drop_path(h, p.drop_path, training, rng);
    return add(x, h);
}

}  // namespace flashcast
