#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "flashcast/autodiff.hpp"
#include "flashcast/conv.hpp"
#include "flashcast/rng.hpp"

namespace flashcast {

namespace scalar {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double gelu(double x) { return x * normal_cdf(x); }
inline double gelu_grad(double x) { return normal_cdf(x) + x * normal_pdf(x); }

}  // namespace scalar

namespace detail {

template <typename T, typename F, typename G>
Variable<T> unary(const Variable<T>& x, const char* op, F forward, G derivative) {
    const Tensor4<T>& xv = x.value();
    Tensor4<T> y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = static_cast<T>(forward(static_cast<double>(xv[i])));
    return make_result<T>(std::move(y), op, {x}, [derivative](Node<T>& self) {
        auto& px = *self.parents[0];
        Tensor4<T> dx(px.value.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            dx[i] = static_cast<T>(static_cast<double>(self.grad[i]) * derivative(static_cast<double>(px.value[i])));
        }
        px.accumulate(dx);
    });
}

}  // namespace detail

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor4<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    return make_result<T>(std::move(y), "add", {a, b}, [](Node<T>& self) {
        self.parents[0]->accumulate(self.grad);
        self.parents[1]->accumulate(self.grad);
    });
}

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor4<T> y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(y), "mul", {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor4<T> da(pa.value.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * pb.value[i];
            pa.accumulate(da);
        }
        if (pb.requires_grad) {
            Tensor4<T> dbv(pb.value.shape());
            for (std::size_t i = 0; i < dbv.size(); ++i) dbv[i] = self.grad[i] * pa.value[i];
            pb.accumulate(dbv);
        }
    });
}

template <typename T>
Variable<T> scale(const Variable<T>& x, double s) {
    Tensor4<T> y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(s * static_cast<double>(x.value()[i]));
    return make_result<T>(std::move(y), "scale", {x}, [s](Node<T>& self) {
        Tensor4<T> dx(self.grad.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = static_cast<T>(s * static_cast<double>(self.grad[i]));
        self.parents[0]->accumulate(dx);
    });
}

template <typename T>
Variable<T> sigmoid(const Variable<T>& x) {
    return detail::unary(x, "sigmoid", [](double v) { return scalar::sigmoid(v); },
                         [](double v) {
                             const double s = scalar::sigmoid(v);
                             return s * (1.0 - s);
                         });
}

template <typename T>
Variable<T> relu(const Variable<T>& x) {
    return detail::unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                         [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

// Exact erf form: x * Phi(x).
template <typename T>
Variable<T> gelu(const Variable<T>& x) {
    const Tensor4<T>& xv = x.value();
    Tensor4<T> y(xv.shape());
    // Phi(x) is kept for the backward pass; erfc dominates the cost of this op.
    auto cdf = std::make_shared<std::vector<double>>(grad_enabled() ? xv.size() : 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double c = scalar::normal_cdf(v);
        if (!cdf->empty()) (*cdf)[i] = c;
        y[i] = static_cast<T>(v * c);
    }
    return make_result<T>(std::move(y), "gelu", {x}, [cdf](Node<T>& self) {
        auto& px = *self.parents[0];
        Tensor4<T> dx(px.value.shape());
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double v = static_cast<double>(px.value[i]);
            dx[i] = static_cast<T>(static_cast<double>(self.grad[i]) * ((*cdf)[i] + v * scalar::normal_pdf(v)));
        }
        px.accumulate(dx);
    });
}

template <typename T>
Variable<T> softplus(const Variable<T>& x) {
    return detail::unary(x, "softplus", [](double v) { return scalar::softplus(v); },
                         [](double v) { return scalar::sigmoid(v); });
}

template <typename T>
Variable<T> sum(const Variable<T>& x) {
    double s = 0.0;
    for (T v : x.value().values()) s += static_cast<double>(v);
    return make_result<T>(Tensor4<T>(Shape4{1, 1, 1, 1}, static_cast<T>(s)), "sum", {x}, [](Node<T>& self) {
        auto& px = *self.parents[0];
        px.accumulate(Tensor4<T>(px.value.shape(), self.grad[0]));
    });
}

// x (B, C, H, W) times v broadcast from (1, C, 1, 1) or (B, C, 1, 1).
template <typename T>
Variable<T> channel_mul(const Variable<T>& x, const Variable<T>& v) {
    const Shape4 xs = x.shape();
    const Shape4 vs = v.shape();
    if (vs.c != xs.c) throw DimensionError("channels", "channel_mul factor " + vs.str() + " vs input " + xs.str());
    if (vs.h != 1 || vs.w != 1) throw DimensionError("height", "channel_mul factor must be spatially 1x1");
    if (vs.n != 1 && vs.n != xs.n) throw DimensionError("batch", "channel_mul factor batch " + vs.str());
    const bool per_sample = vs.n != 1;
    Tensor4<T> y(xs);
    for (std::size_t b = 0; b < xs.n; ++b) {
        for (std::size_t c = 0; c < xs.c; ++c) {
            const T f = v.value()[(per_sample ? b : 0) * xs.c + c];
            const T* xp = x.value().plane(b, c);
            T* yp = y.plane(b, c);
            for (std::size_t i = 0; i < xs.plane(); ++i) yp[i] = xp[i] * f;
        }
    }
    return make_result<T>(std::move(y), "channel_mul", {x, v}, [per_sample](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        const Shape4 s = px.value.shape();
        if (px.requires_grad) {
            Tensor4<T> dx(s);
            for (std::size_t b = 0; b < s.n; ++b) {
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T f = pv.value[(per_sample ? b : 0) * s.c + c];
                    const T* g = self.grad.plane(b, c);
                    T* d = dx.plane(b, c);
                    for (std::size_t i = 0; i < s.plane(); ++i) d[i] = g[i] * f;
                }
            }
            px.accumulate(dx);
        }
        if (pv.requires_grad) {
            Tensor4<T> dv(pv.value.shape());
            std::vector<double> acc(dv.size(), 0.0);
            for (std::size_t b = 0; b < s.n; ++b) {
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* g = self.grad.plane(b, c);
                    const T* xp = px.value.plane(b, c);
                    double sacc = 0.0;
                    for (std::size_t i = 0; i < s.plane(); ++i) sacc += static_cast<double>(g[i]) * xp[i];
                    acc[(per_sample ? b : 0) * s.c + c] += sacc;
                }
            }
            for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = static_cast<T>(acc[i]);
            pv.accumulate(dv);
        }
    });
}

// Per-(batch, channel) spatial mean, shape (B, C, 1, 1).
template <typename T>
Variable<T> global_avg_pool(const Variable<T>& x) {
    const Shape4 s = x.shape();
    if (s.plane() == 0) throw DimensionError("height", "global_avg_pool over empty spatial extent " + s.str());
    Tensor4<T> y(Shape4{s.n, s.c, 1, 1});
    const double inv = 1.0 / static_cast<double>(s.plane());
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            double acc = 0.0;
            const T* p = x.value().plane(b, c);
            for (std::size_t i = 0; i < s.plane(); ++i) acc += static_cast<double>(p[i]);
            y[b * s.c + c] = static_cast<T>(acc * inv);
        }
    }
    return make_result<T>(std::move(y), "global_avg_pool", {x}, [inv](Node<T>& self) {
        auto& px = *self.parents[0];
        const Shape4 xs = px.value.shape();
        Tensor4<T> dx(xs);
        for (std::size_t b = 0; b < xs.n; ++b) {
            for (std::size_t c = 0; c < xs.c; ++c) {
                const T g = static_cast<T>(static_cast<double>(self.grad[b * xs.c + c]) * inv);
                T* d = dx.plane(b, c);
                std::fill(d, d + xs.plane(), g);
            }
        }
        px.accumulate(dx);
    });
}

// Normalizes across channels independently at every (b, h, w), then applies per-channel affine.
template <typename T>
Variable<T> layer_norm_cf(const Variable<T>& x, const Variable<T>& scale_v, const Variable<T>& shift_v, double eps) {
    const Shape4 s = x.shape();
    if (s.c == 0) throw DimensionError("channels", "layer_norm_cf needs at least one channel");
    if (scale_v.value().size() != s.c || shift_v.value().size() != s.c) {
        throw DimensionError("channels", "layer_norm_cf affine size does not match " + std::to_string(s.c) + " channels");
    }
    const std::size_t plane = s.plane();
    Tensor4<T> y(s);
    Tensor4<T> xhat(s);
    std::vector<double> inv_std(s.n * plane);
    std::vector<double> mean(plane), var(plane);
    const double inv_c = 1.0 / static_cast<double>(s.c);
    for (std::size_t b = 0; b < s.n; ++b) {
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) mean[i] += static_cast<double>(p[i]);
        }
        for (std::size_t i = 0; i < plane; ++i) mean[i] *= inv_c;
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = static_cast<double>(p[i]) - mean[i];
                var[i] += d * d;
            }
        }
        double* is = inv_std.data() + b * plane;
        for (std::size_t i = 0; i < plane; ++i) is[i] = 1.0 / std::sqrt(var[i] * inv_c + eps);
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(b, c);
            T* xh = xhat.plane(b, c);
            T* yp = y.plane(b, c);
            const double g = static_cast<double>(scale_v.value()[c]);
            const double sh = static_cast<double>(shift_v.value()[c]);
            for (std::size_t i = 0; i < plane; ++i) {
                const double n = (static_cast<double>(p[i]) - mean[i]) * is[i];
                xh[i] = static_cast<T>(n);
                yp[i] = static_cast<T>(g * n + sh);
            }
        }
    }
    return make_result<T>(
        std::move(y), "layer_norm_cf", {x, scale_v, shift_v},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), eps](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const Shape4 xs = px.value.shape();
            const std::size_t plane = xs.plane();
            const double inv_c = 1.0 / static_cast<double>(xs.c);
            if (px.requires_grad) {
                Tensor4<T> dx(xs);
                std::vector<double> mg(plane), mgx(plane);
                for (std::size_t b = 0; b < xs.n; ++b) {
                    std::fill(mg.begin(), mg.end(), 0.0);
                    std::fill(mgx.begin(), mgx.end(), 0.0);
                    for (std::size_t c = 0; c < xs.c; ++c) {
                        const double gm = static_cast<double>(pg.value[c]);
                        const T* dy = self.grad.plane(b, c);
                        const T* xh = xhat.plane(b, c);
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double gi = static_cast<double>(dy[i]) * gm;
                            mg[i] += gi;
                            mgx[i] += gi * static_cast<double>(xh[i]);
                        }
                    }
                    const double* is = inv_std.data() + b * plane;
                    for (std::size_t c = 0; c < xs.c; ++c) {
                        const double gm = static_cast<double>(pg.value[c]);
                        const T* dy = self.grad.plane(b, c);
                        const T* xh = xhat.plane(b, c);
                        T* d = dx.plane(b, c);
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double gi = static_cast<double>(dy[i]) * gm;
                            d[i] = static_cast<T>(is[i] * (gi - mg[i] * inv_c - static_cast<double>(xh[i]) * mgx[i] * inv_c));
                        }
                    }
                }
                px.accumulate(dx);
            }
            if (pg.requires_grad || pb.requires_grad) {
                Tensor4<T> dg(pg.value.shape()), dbt(pb.value.shape());
                for (std::size_t c = 0; c < xs.c; ++c) {
                    double sg = 0.0, sb = 0.0;
                    for (std::size_t b = 0; b < xs.n; ++b) {
                        const T* dy = self.grad.plane(b, c);
                        const T* xh = xhat.plane(b, c);
                        for (std::size_t i = 0; i < plane; ++i) {
                            sg += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
                            sb += static_cast<double>(dy[i]);
                        }
                    }
                    dg[c] = static_cast<T>(sg);
                    dbt[c] = static_cast<T>(sb);
                }
                pg.accumulate(dg);
                pb.accumulate(dbt);
            }
            (void)eps;
        });
}

// Splits along channels into contiguous groups of the given sizes (zero-size groups allowed).
template <typename T>
std::vector<Variable<T>> split_channels(const Variable<T>& x, const std::vector<std::size_t>& sizes) {
    const Shape4 s = x.shape();
    std::size_t total = 0;
    for (auto n : sizes) total += n;
    if (total != s.c) {
        throw DimensionError("channels", "split sizes sum to " + std::to_string(total) + ", input has " +
                                             std::to_string(s.c) + " channels");
    }
    std::vector<Variable<T>> out;
    std::size_t offset = 0;
    for (auto n : sizes) {
        Tensor4<T> part(Shape4{s.n, n, s.h, s.w});
        for (std::size_t b = 0; b < s.n; ++b) {
            for (std::size_t c = 0; c < n; ++c) {
                const T* src = x.value().plane(b, offset + c);
                std::copy(src, src + s.plane(), part.plane(b, c));
            }
        }
        out.push_back(make_result<T>(std::move(part), "split_channels", {x}, [offset, n](Node<T>& self) {
            auto& px = *self.parents[0];
            const Shape4 xs = px.value.shape();
            Tensor4<T> dx(xs);
            for (std::size_t b = 0; b < xs.n; ++b) {
                for (std::size_t c = 0; c < n; ++c) {
                    const T* g = self.grad.plane(b, c);
                    std::copy(g, g + xs.plane(), dx.plane(b, offset + c));
                }
            }
            px.accumulate(dx);
        }));
        offset += n;
    }
    return out;
}

template <typename T>
Variable<T> concat_channels(const std::vector<Variable<T>>& parts) {
    if (parts.empty()) throw DimensionError("channels", "concat_channels of nothing");
    const Shape4 first = parts.front().shape();
    std::size_t total = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        const Shape4 s = p.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw DimensionError(s.n != first.n ? "batch" : s.h != first.h ? "height" : "width",
                                 "concat_channels part " + s.str() + " vs " + first.str());
        }
        sizes.push_back(s.c);
        total += s.c;
    }
    const Shape4 os{first.n, total, first.h, first.w};
    Tensor4<T> y(os);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        for (std::size_t b = 0; b < os.n; ++b) {
            for (std::size_t c = 0; c < p.shape().c; ++c) {
                const T* src = p.value().plane(b, c);
                std::copy(src, src + os.plane(), y.plane(b, offset + c));
            }
        }
        offset += p.shape().c;
    }
    return make_result<T>(std::move(y), "concat_channels", parts, [sizes](Node<T>& self) {
        const Shape4 gs = self.grad.shape();
        std::size_t off = 0;
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            auto& pk = *self.parents[k];
            if (pk.requires_grad && sizes[k] > 0) {
                Tensor4<T> d(pk.value.shape());
                for (std::size_t b = 0; b < gs.n; ++b) {
                    for (std::size_t c = 0; c < sizes[k]; ++c) {
                        const T* g = self.grad.plane(b, off + c);
                        std::copy(g, g + gs.plane(), d.plane(b, c));
                    }
                }
                pk.accumulate(d);
            }
            off += sizes[k];
        }
    });
}

// Stochastic depth: per sample, zero the input with probability p, else scale by 1/(1-p).
// Identity when not training or p == 0.
template <typename T>
Variable<T> drop_path(const Variable<T>& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("drop_path probability must lie in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return x;
    const Shape4 s = x.shape();
    const std::size_t per = s.c * s.plane();
    std::vector<T> factor(s.n);
    for (std::size_t b = 0; b < s.n; ++b) factor[b] = uniform01(rng) >= p ? static_cast<T>(1.0 / (1.0 - p)) : T(0);
    Tensor4<T> y(s);
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t i = 0; i < per; ++i) y[b * per + i] = x.value()[b * per + i] * factor[b];
    }
    return make_result<T>(std::move(y), "drop_path", {x}, [factor, per](Node<T>& self) {
        Tensor4<T> dx(self.grad.shape());
        for (std::size_t b = 0; b < factor.size(); ++b) {
            for (std::size_t i = 0; i < per; ++i) dx[b * per + i] = self.grad[b * per + i] * factor[b];
        }
        self.parents[0]->accumulate(dx);
    });
}

namespace detail {

struct LerpTap {
    std::size_t i0, i1;
    double w1;
};

// Half-pixel-centre source taps, edges clamped.
inline std::vector<LerpTap> bilinear_taps(std::size_t out, std::size_t in) {
    std::vector<LerpTap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace detail

template <typename T>
Variable<T> upsample_bilinear(const Variable<T>& x, std::size_t out_h, std::size_t out_w) {
    const Shape4 s = x.shape();
    if (s.h == out_h && s.w == out_w) return x;
    if (s.h == 0 || s.w == 0) throw DimensionError("height", "upsample of empty input");
    auto ty = detail::bilinear_taps(out_h, s.h);
    auto tx = detail::bilinear_taps(out_w, s.w);
    Tensor4<T> y(Shape4{s.n, s.c, out_h, out_w});
    for (std::size_t b = 0; b < s.n; ++b) {
        for (std::size_t c = 0; c < s.c; ++c) {
            const T* p = x.value().plane(b, c);
            T* q = y.plane(b, c);
            for (std::size_t i = 0; i < out_h; ++i) {
                const auto& a = ty[i];
                for (std::size_t j = 0; j < out_w; ++j) {
                    const auto& e = tx[j];
                    const double top = (1 - e.w1) * p[a.i0 * s.w + e.i0] + e.w1 * p[a.i0 * s.w + e.i1];
                    const double bot = (1 - e.w1) * p[a.i1 * s.w + e.i0] + e.w1 * p[a.i1 * s.w + e.i1];
                    q[i * out_w + j] = static_cast<T>((1 - a.w1) * top + a.w1 * bot);
                }
            }
        }
    }
    return make_result<T>(std::move(y), "upsample_bilinear", {x}, [ty, tx, out_h, out_w](Node<T>& self) {
        auto& px = *self.parents[0];
        const Shape4 xs = px.value.shape();
        Tensor4<T> dx(xs);
        std::vector<double> acc(xs.plane());
        for (std::size_t b = 0; b < xs.n; ++b) {
            for (std::size_t c = 0; c < xs.c; ++c) {
                std::fill(acc.begin(), acc.end(), 0.0);
                const T* g = self.grad.plane(b, c);
                for (std::size_t i = 0; i < out_h; ++i) {
                    const auto& a = ty[i];
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const auto& e = tx[j];
                        const double gv = g[i * out_w + j];
                        acc[a.i0 * xs.w + e.i0] += gv * (1 - a.w1) * (1 - e.w1);
                        acc[a.i0 * xs.w + e.i1] += gv * (1 - a.w1) * e.w1;
                        acc[a.i1 * xs.w + e.i0] += gv * a.w1 * (1 - e.w1);
                        acc[a.i1 * xs.w + e.i1] += gv * a.w1 * e.w1;
                    }
                }
                T* d = dx.plane(b, c);
                for (std::size_t k = 0; k < acc.size(); ++k) d[k] = static_cast<T>(acc[k]);
            }
        }
        px.accumulate(dx);
    });
}

}  // namespace flashcast
