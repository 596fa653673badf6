#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "flashcast/model.hpp"

namespace flashcast {

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t epochs = 15;
    std::size_t batch_size = 8;
    // Stop after this many optimizer steps (0 = run all epochs).
    std::size_t max_steps = 0;
    bool cosine_schedule = false;
    double min_lr = 0.0;
    // Global L2 gradient-norm clip (0 = off).
    double clip_grad_norm = 0.0;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("optim.lr must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
        if (epochs < 1) throw ConfigError("optim.epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
        if (!(min_lr >= 0.0 && min_lr <= lr)) throw ConfigError("optim.min_lr must lie in [0, lr]");
        if (!(clip_grad_norm >= 0.0)) throw ConfigError("optim.clip_grad_norm must be >= 0");
    }

    // Learning rate for a 0-based step out of total_steps.
    double lr_at(std::size_t step, std::size_t total_steps) const {
        if (!cosine_schedule || total_steps <= 1) return lr;
        const double frac = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
        return min_lr + 0.5 * (lr - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
    }
};

template <typename T>
struct AdamState {
    std::vector<Tensor4<T>> m, v;  // one per parameter, in named_params order
    std::uint64_t t = 0;

    bool empty() const { return m.empty(); }

    static AdamState zeros_like(const std::vector<NamedParam<T>>& params) {
        AdamState s;
        for (const auto& p : params) {
            s.m.emplace_back(p.var.shape());
            s.v.emplace_back(p.var.shape());
        }
        return s;
    }
};

// Global L2 norm of all gradients; throws on a non-finite gradient, naming the parameter.
template <typename T>
double gradient_norm(const std::vector<NamedParam<T>>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        for (T g : p.var.grad().values()) {
            if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in " + p.name);
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    return std::sqrt(sq);
}

// Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p), with wd = 0 for
// norm affine parameters and layer scales. grad_scale multiplies every gradient (clipping).
template <typename T>
void adamw_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, const OptimConfig& cfg, double lr,
                double grad_scale = 1.0) {
    if (state.empty()) state = AdamState<T>::zeros_like(params);
    if (state.m.size() != params.size()) throw TrainingError("optimizer state does not match the parameter list");
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        for (T g : p.var.grad().values()) {
            if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in " + p.name);
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        Tensor4<T>& value = p.var.mutable_value();
        Tensor4<T>& m = state.m[k];
        Tensor4<T>& v = state.v[k];
        const bool has = p.var.has_grad();
        const T* g = has ? p.var.grad().data() : nullptr;
        const double wd = decays(p.role) ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double gi = has ? grad_scale * static_cast<double>(g[i]) : 0.0;
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double pi = static_cast<double>(value[i]);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps) + wd * pi;
            value[i] = static_cast<T>(pi - lr * update);
        }
    }
}

}  // namespace flashcast
