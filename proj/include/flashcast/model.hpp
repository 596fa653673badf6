#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flashcast/layers.hpp"

namespace flashcast {

struct ModelConfig {
    std::size_t in_channels = 9;
    std::array<std::size_t, 4> stage_widths{48, 96, 192, 288};
    std::array<std::size_t, 4> stage_depths{3, 3, 27, 3};
    bool se_enabled = false;
    std::size_t se_reduction = 16;
    bool layer_scale = true;
    double layer_scale_init = 1e-6;
    double drop_path_rate = 0.0;
    // false: stages 2-4 downsample by 2 and features are bilinearly upsampled before the heads.
    bool resolution_preserving = true;
    std::size_t band_kernel = 11;
    std::size_t branch_denominator = 8;
    std::size_t pointwise_groups = 1;
    double norm_eps = 1e-6;

    // Widths 4/8/8/8, depths 1/1/2/1.
    static ModelConfig tiny() {
        ModelConfig c;
        c.stage_widths = {4, 8, 8, 8};
        c.stage_depths = {1, 1, 2, 1};
        return c;
    }

    std::size_t total_blocks() const {
        return stage_depths[0] + stage_depths[1] + stage_depths[2] + stage_depths[3];
    }

    void validate() const {
        if (in_channels == 0) throw ConfigError("model.in_channels must be >= 1");
        for (std::size_t i = 0; i < 4; ++i) {
            if (stage_widths[i] == 0) throw ConfigError("model.stage_widths entries must be >= 1");
            if (stage_widths[i] % pointwise_groups != 0) {
                throw ConfigError("model.stage_widths[" + std::to_string(i) + "] not divisible by pointwise_groups");
            }
        }
        if (band_kernel == 0 || band_kernel % 2 == 0) throw ConfigError("model.band_kernel must be odd");
        if (branch_denominator == 0) throw ConfigError("model.branch_denominator must be >= 1");
        if (pointwise_groups == 0) throw ConfigError("model.pointwise_groups must be >= 1");
        if (se_reduction == 0) throw ConfigError("model.se_reduction must be >= 1");
        if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) throw ConfigError("model.drop_path_rate must be in [0, 1)");
        if (!(norm_eps > 0.0)) throw ConfigError("model.norm_eps must be positive");
    }
};

// Depthwise 3x3 then pointwise 1x1 (width change), then channels-first layer norm.
template <typename T>
struct SeparableParams {
    std::size_t stride = 1;
    Variable<T> dw_weight, dw_bias;  // (Cin, 1, 3, 3)
    Variable<T> pw_weight, pw_bias;  // (Cout, Cin, 1, 1)
    Variable<T> norm_scale, norm_shift;

    static SeparableParams init(Rng& rng, std::size_t cin, std::size_t cout, std::size_t stride) {
        SeparableParams p;
        p.stride = stride;
        p.dw_weight = init_conv_weight<T>(rng, {cin, 1, 3, 3});
        p.dw_bias = init_constant<T>(channel_shape(cin), 0.0);
        p.pw_weight = init_conv_weight<T>(rng, {cout, cin, 1, 1});
        p.pw_bias = init_constant<T>(channel_shape(cout), 0.0);
        p.norm_scale = init_constant<T>(channel_shape(cout), 1.0);
        p.norm_shift = init_constant<T>(channel_shape(cout), 0.0);
        return p;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".dw.weight", dw_weight, ParamRole::Weight);
        f(prefix + ".dw.bias", dw_bias, ParamRole::Bias);
        f(prefix + ".pw.weight", pw_weight, ParamRole::Weight);
        f(prefix + ".pw.bias", pw_bias, ParamRole::Bias);
        f(prefix + ".norm.scale", norm_scale, ParamRole::NormAffine);
        f(prefix + ".norm.shift", norm_shift, ParamRole::NormAffine);
    }
};

template <typename T>
Variable<T> separable_conv(const Variable<T>& x, const SeparableParams<T>& p, double norm_eps) {
    const std::size_t cin = x.shape().c;
    Variable<T> h = conv2d(x, p.dw_weight, std::optional{p.dw_bias}, Conv2dOptions::same(3, 3, cin, p.stride));
    h = conv2d(h, p.pw_weight, std::optional{p.pw_bias});
    return layer_norm_cf(h, p.norm_scale, p.norm_shift, norm_eps);
}

template <typename T>
struct StageParams {
    SeparableParams<T> transition;
    std::vector<BlockParams<T>> blocks;
};

template <typename T>
struct NamedParam {
    std::string name;
    Variable<T> var;
    ParamRole role;
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    SeparableParams<T> stem;
    std::vector<StageParams<T>> stages;
    Variable<T> cls_weight, cls_bias;  // (1, C_final, 1, 1), (1, 1, 1, 1)
    Variable<T> reg_weight, reg_bias;

    void visit(const ParamVisitor<T>& f) {
        stem.visit("stem", f);
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string sp = "stages." + std::to_string(s);
            stages[s].transition.visit(sp + ".transition", f);
            for (std::size_t b = 0; b < stages[s].blocks.size(); ++b) {
                stages[s].blocks[b].visit(sp + ".blocks." + std::to_string(b), f);
            }
        }
        f("head_cls.weight", cls_weight, ParamRole::Weight);
        f("head_cls.bias", cls_bias, ParamRole::Bias);
        f("head_reg.weight", reg_weight, ParamRole::Weight);
        f("head_reg.bias", reg_bias, ParamRole::Bias);
    }

    // Deterministic order; Variables share storage with the model.
    std::vector<NamedParam<T>> named_params() {
        std::vector<NamedParam<T>> out;
        visit([&](const std::string& name, Variable<T>& v, ParamRole role) { out.push_back({name, v, role}); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](const std::string&, Variable<T>& v, ParamRole) { n += v.value().size(); });
        return n;
    }
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = derive_rng(seed, /*stream=*/1);
    ModelParams<T> p;
    p.config = config;
    const auto& widths = config.stage_widths;
    p.stem = SeparableParams<T>::init(rng, config.in_channels, widths[0], 1);
    const std::size_t total = config.total_blocks();
    std::size_t block_index = 0;
    std::size_t width = widths[0];
    for (std::size_t s = 0; s < 4; ++s) {
        StageParams<T> stage;
        const std::size_t stride = (!config.resolution_preserving && s > 0) ? 2 : 1;
        stage.transition = SeparableParams<T>::init(rng, width, widths[s], stride);
        width = widths[s];
        for (std::size_t b = 0; b < config.stage_depths[s]; ++b, ++block_index) {
            typename BlockParams<T>::Options o;
            o.band_kernel = config.band_kernel;
            o.branch_denominator = config.branch_denominator;
            o.pointwise_groups = config.pointwise_groups;
            o.se_enabled = config.se_enabled;
            o.se_reduction = config.se_reduction;
            o.layer_scale = config.layer_scale;
            o.layer_scale_init = config.layer_scale_init;
            o.norm_eps = config.norm_eps;
            o.drop_path = total > 1 ? config.drop_path_rate * static_cast<double>(block_index) /
                                          static_cast<double>(total - 1)
                                    : config.drop_path_rate;
            stage.blocks.push_back(BlockParams<T>::init(rng, width, o));
        }
        p.stages.push_back(std::move(stage));
    }
    p.cls_weight = init_conv_weight<T>(rng, {1, width, 1, 1});
    p.cls_bias = init_constant<T>({1, 1, 1, 1}, 0.0);
    p.reg_weight = init_conv_weight<T>(rng, {1, width, 1, 1});
    p.reg_bias = init_constant<T>({1, 1, 1, 1}, 0.0);
    return p;
}

// Same architecture, values converted element-wise.
template <typename U, typename T>
ModelParams<U> cast_params(ModelParams<T>& src) {
    ModelParams<U> dst = init_params<U>(src.config, 0);
    auto from = src.named_params();
    auto to = dst.named_params();
    for (std::size_t i = 0; i < from.size(); ++i) to[i].var.mutable_value() = from[i].var.value().template cast<U>();
    return dst;
}

template <typename T>
struct ModelOutput {
    Variable<T> logits;      // (B, 1, H, W), unbounded
    Variable<T> magnitudes;  // (B, 1, H, W), softplus > 0
};

template <typename T>
ModelOutput<T> forward(const ModelParams<T>& p, const Variable<T>& x, bool training, Rng& rng) {
    const ModelConfig& cfg = p.config;
    if (x.shape().c != cfg.in_channels) {
        throw DimensionError("channels", "model expects in_channels = " + std::to_string(cfg.in_channels) +
                                             ", input has " + std::to_string(x.shape().c));
    }
    const std::size_t out_h = x.shape().h;
    const std::size_t out_w = x.shape().w;
    Variable<T> h = separable_conv(x, p.stem, cfg.norm_eps);
    for (const auto& stage : p.stages) {
        h = separable_conv(h, stage.transition, cfg.norm_eps);
        for (const auto& block : stage.blocks) h = residual_block(h, block, training, rng);
    }
    if (h.shape().h != out_h || h.shape().w != out_w) h = upsample_bilinear(h, out_h, out_w);
    ModelOutput<T> out;
    out.logits = conv2d(h, p.cls_weight, std::optional{p.cls_bias});
    out.magnitudes = softplus(conv2d(h, p.reg_weight, std::optional{p.reg_bias}));
    return out;
}

enum class DensityMode { Gated, Expected };

inline DensityMode parse_density_mode(const std::string& s) {
    if (s == "gated") return DensityMode::Gated;
    if (s == "expected") return DensityMode::Expected;
    throw ConfigError("unknown density mode '" + s + "' (expected 'gated' or 'expected')");
}

inline const char* to_string(DensityMode m) { return m == DensityMode::Gated ? "gated" : "expected"; }

// gated: magnitude where sigmoid(logit) > threshold, else 0. expected: sigmoid(logit) * magnitude.
template <typename T>
Tensor4<T> predict_density(const Tensor4<T>& logits, const Tensor4<T>& magnitudes, DensityMode mode,
                           double threshold = 0.5) {
    require_same_shape(logits.shape(), magnitudes.shape(), "predict_density");
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("density threshold must lie in (0, 1), got " + std::to_string(threshold));
    }
    Tensor4<T> out(logits.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double prob = scalar::sigmoid(static_cast<double>(logits[i]));
        const double mag = std::max(0.0, static_cast<double>(magnitudes[i]));
        out[i] = static_cast<T>(mode == DensityMode::Gated ? (prob > threshold ? mag : 0.0) : prob * mag);
    }
    return out;
}

}  // namespace flashcast
