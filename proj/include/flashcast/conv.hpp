#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "flashcast/autodiff.hpp"

namespace flashcast {

struct Conv2dOptions {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    std::size_t groups = 1;

    // Zero padding that keeps spatial size for an odd kernel at stride 1.
    static Conv2dOptions same(std::size_t kh, std::size_t kw, std::size_t groups = 1, std::size_t stride = 1) {
        return {stride, stride, kh / 2, kw / 2, groups};
    }
};

namespace kernels {

struct ConvGeometry {
    Shape4 in;
    Shape4 kernel;
    Shape4 out;
    std::size_t cin_g;
    std::size_t cout_g;
    bool pointwise;
};

inline ConvGeometry conv_geometry(const Shape4& in, const Shape4& kernel, const Conv2dOptions& opt) {
    if (opt.groups == 0) throw DimensionError("groups", "groups must be >= 1");
    if (opt.stride_h == 0 || opt.stride_w == 0) throw DimensionError("stride", "stride must be >= 1");
    if (in.c % opt.groups != 0) {
        throw DimensionError("channels", "input channels " + std::to_string(in.c) +
                                             " not divisible by groups " + std::to_string(opt.groups));
    }
    if (kernel.n % opt.groups != 0) {
        throw DimensionError("channels", "output channels " + std::to_string(kernel.n) +
                                             " not divisible by groups " + std::to_string(opt.groups));
    }
    const std::size_t cin_g = in.c / opt.groups;
    if (kernel.c != cin_g) {
        throw DimensionError("channels", "kernel expects " + std::to_string(kernel.c) +
                                             " input channels per group, input provides " +
                                             std::to_string(cin_g));
    }
    if (kernel.h == 0 || kernel.w == 0) throw DimensionError("kernel", "empty kernel " + kernel.str());
    if (in.h + 2 * opt.pad_h < kernel.h) {
        throw DimensionError("height", "padded height smaller than kernel height");
    }
    if (in.w + 2 * opt.pad_w < kernel.w) {
        throw DimensionError("width", "padded width smaller than kernel width");
    }
    const std::size_t oh = (in.h + 2 * opt.pad_h - kernel.h) / opt.stride_h + 1;
    const std::size_t ow = (in.w + 2 * opt.pad_w - kernel.w) / opt.stride_w + 1;
    const bool pointwise = kernel.h == 1 && kernel.w == 1 && opt.stride_h == 1 && opt.stride_w == 1 &&
                           opt.pad_h == 0 && opt.pad_w == 0;
    return {in, kernel, Shape4{in.n, kernel.n, oh, ow}, cin_g, kernel.n / opt.groups, pointwise};
}

// Output columns [lo, hi) whose input column ow*stride + k - pad lies inside [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t in_extent, std::size_t k,
                                                       std::size_t pad, std::size_t stride) {
    const long long kk = static_cast<long long>(k) - static_cast<long long>(pad);
    long long lo = 0;
    if (kk < 0) lo = (-kk + static_cast<long long>(stride) - 1) / static_cast<long long>(stride);
    const long long last = static_cast<long long>(in_extent) - 1 - kk;
    long long hi = last < 0 ? 0 : last / static_cast<long long>(stride) + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out_extent));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
MatD to_matd(const T* p, std::size_t rows, std::size_t cols) {
    using MapT = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    return MapT(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).template cast<double>();
}

template <typename T>
void store_matd(const MatD& m, T* dst) {
    const double* s = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] = static_cast<T>(s[i]);
}

// Cross-correlation with zero padding. Sums are accumulated in double in a fixed order.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                          const Conv2dOptions& opt) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), opt);
    if (bias && bias->size() != g.out.c) {
        throw DimensionError("bias", "bias has " + std::to_string(bias->size()) + " entries, expected " +
                                         std::to_string(g.out.c));
    }
    Tensor4<T> y(g.out);
    const std::size_t in_plane = g.in.plane();
    const std::size_t out_plane = g.out.plane();

    if (g.pointwise) {
        for (std::size_t b = 0; b < g.in.n; ++b) {
            for (std::size_t grp = 0; grp < opt.groups; ++grp) {
                const MatD xm = to_matd(x.plane(b, grp * g.cin_g), g.cin_g, in_plane);
                const MatD wm = to_matd(w.data() + grp * g.cout_g * g.cin_g, g.cout_g, g.cin_g);
                MatD ym = wm * xm;
                if (bias) {
                    for (std::size_t o = 0; o < g.cout_g; ++o) {
                        ym.row(static_cast<Eigen::Index>(o)).array() +=
                            static_cast<double>((*bias)[grp * g.cout_g + o]);
                    }
                }
                store_matd(ym, y.plane(b, grp * g.cout_g));
            }
        }
        return y;
    }

    std::vector<double> acc(out_plane);
    for (std::size_t b = 0; b < g.in.n; ++b) {
        for (std::size_t oc = 0; oc < g.out.c; ++oc) {
            const std::size_t grp = oc / g.cout_g;
            std::fill(acc.begin(), acc.end(), bias ? static_cast<double>((*bias)[oc]) : 0.0);
            for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
                const T* xp = x.plane(b, grp * g.cin_g + icg);
                for (std::size_t ki = 0; ki < g.kernel.h; ++ki) {
                    const auto [oh_lo, oh_hi] = valid_range(g.out.h, g.in.h, ki, opt.pad_h, opt.stride_h);
                    for (std::size_t kj = 0; kj < g.kernel.w; ++kj) {
                        const double wv = static_cast<double>(w(oc, icg, ki, kj));
                        const auto [ow_lo, ow_hi] = valid_range(g.out.w, g.in.w, kj, opt.pad_w, opt.stride_w);
                        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                            const T* xrow = xp + (oh * opt.stride_h + ki - opt.pad_h) * g.in.w;
                            double* arow = acc.data() + oh * g.out.w;
                            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                arow[ow] += wv * static_cast<double>(xrow[ow * opt.stride_w + kj - opt.pad_w]);
                            }
                        }
                    }
                }
            }
            T* yp = y.plane(b, oc);
            for (std::size_t i = 0; i < out_plane; ++i) yp[i] = static_cast<T>(acc[i]);
        }
    }
    return y;
}

template <typename T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& dy, const Conv2dOptions& opt,
                     Tensor4<T>* dx, Tensor4<T>* dw, Tensor4<T>* db) {
    const ConvGeometry g = conv_geometry(x.shape(), w.shape(), opt);
    require_same_shape(dy.shape(), g.out, "conv2d output gradient");
    const std::size_t in_plane = g.in.plane();
    const std::size_t out_plane = g.out.plane();

    if (db) {
        *db = Tensor4<T>(Shape4{1, g.out.c, 1, 1});
        for (std::size_t oc = 0; oc < g.out.c; ++oc) {
            double s = 0.0;
            for (std::size_t b = 0; b < g.in.n; ++b) {
                const T* p = dy.plane(b, oc);
                for (std::size_t i = 0; i < out_plane; ++i) s += static_cast<double>(p[i]);
            }
            (*db)[oc] = static_cast<T>(s);
        }
    }

    if (g.pointwise) {
        if (dx) *dx = Tensor4<T>(g.in);
        std::vector<MatD> dw_acc;
        if (dw) dw_acc.assign(opt.groups, MatD::Zero(static_cast<Eigen::Index>(g.cout_g), static_cast<Eigen::Index>(g.cin_g)));
        for (std::size_t b = 0; b < g.in.n; ++b) {
            for (std::size_t grp = 0; grp < opt.groups; ++grp) {
                const MatD dym = to_matd(dy.plane(b, grp * g.cout_g), g.cout_g, out_plane);
                if (dx) {
                    const MatD wm = to_matd(w.data() + grp * g.cout_g * g.cin_g, g.cout_g, g.cin_g);
                    const MatD dxm = wm.transpose() * dym;
                    store_matd(dxm, dx->plane(b, grp * g.cin_g));
                }
                if (dw) {
                    const MatD xm = to_matd(x.plane(b, grp * g.cin_g), g.cin_g, in_plane);
                    dw_acc[grp].noalias() += dym * xm.transpose();
                }
            }
        }
        if (dw) {
            *dw = Tensor4<T>(g.kernel);
            for (std::size_t grp = 0; grp < opt.groups; ++grp) {
                store_matd(dw_acc[grp], dw->data() + grp * g.cout_g * g.cin_g);
            }
        }
        return;
    }

    if (dx) {
        *dx = Tensor4<T>(g.in);
        std::vector<double> acc(in_plane);
        for (std::size_t b = 0; b < g.in.n; ++b) {
            for (std::size_t ic = 0; ic < g.in.c; ++ic) {
                const std::size_t grp = ic / g.cin_g;
                const std::size_t icg = ic % g.cin_g;
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t ocg = 0; ocg < g.cout_g; ++ocg) {
                    const std::size_t oc = grp * g.cout_g + ocg;
                    const T* dyp = dy.plane(b, oc);
                    for (std::size_t ki = 0; ki < g.kernel.h; ++ki) {
                        const auto [oh_lo, oh_hi] = valid_range(g.out.h, g.in.h, ki, opt.pad_h, opt.stride_h);
                        for (std::size_t kj = 0; kj < g.kernel.w; ++kj) {
                            const double wv = static_cast<double>(w(oc, icg, ki, kj));
                            const auto [ow_lo, ow_hi] = valid_range(g.out.w, g.in.w, kj, opt.pad_w, opt.stride_w);
                            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                double* arow = acc.data() + (oh * opt.stride_h + ki - opt.pad_h) * g.in.w;
                                const T* dyrow = dyp + oh * g.out.w;
                                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                    arow[ow * opt.stride_w + kj - opt.pad_w] += wv * static_cast<double>(dyrow[ow]);
                                }
                            }
                        }
                    }
                }
                T* dxp = dx->plane(b, ic);
                for (std::size_t i = 0; i < in_plane; ++i) dxp[i] = static_cast<T>(acc[i]);
            }
        }
    }

    if (dw) {
        *dw = Tensor4<T>(g.kernel);
        for (std::size_t oc = 0; oc < g.out.c; ++oc) {
            const std::size_t grp = oc / g.cout_g;
            for (std::size_t icg = 0; icg < g.cin_g; ++icg) {
                for (std::size_t ki = 0; ki < g.kernel.h; ++ki) {
                    const auto [oh_lo, oh_hi] = valid_range(g.out.h, g.in.h, ki, opt.pad_h, opt.stride_h);
                    for (std::size_t kj = 0; kj < g.kernel.w; ++kj) {
                        const auto [ow_lo, ow_hi] = valid_range(g.out.w, g.in.w, kj, opt.pad_w, opt.stride_w);
                        double s = 0.0;
                        for (std::size_t b = 0; b < g.in.n; ++b) {
                            const T* xp = x.plane(b, grp * g.cin_g + icg);
                            const T* dyp = dy.plane(b, oc);
                            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const T* xrow = xp + (oh * opt.stride_h + ki - opt.pad_h) * g.in.w;
                                const T* dyrow = dyp + oh * g.out.w;
                                for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                    s += static_cast<double>(dyrow[ow]) *
                                         static_cast<double>(xrow[ow * opt.stride_w + kj - opt.pad_w]);
                                }
                            }
                        }
                        (*dw)(oc, icg, ki, kj) = static_cast<T>(s);
                    }
                }
            }
        }
    }
}

}  // namespace kernels

// Differentiable 2-D convolution. kernel is (Cout, Cin/groups, kh, kw); bias, when given, holds
// Cout values in any shape.
template <typename T>
Variable<T> conv2d(const Variable<T>& x, const Variable<T>& kernel, const std::optional<Variable<T>>& bias,
                   const Conv2dOptions& opt = {}) {
    const Tensor4<T>* b = bias ? &bias->value() : nullptr;
    Tensor4<T> y = kernels::conv2d_forward(x.value(), kernel.value(), b, opt);
    if (bias) {
        return make_result<T>(std::move(y), "conv2d", {x, kernel, *bias}, [opt](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            auto& pb = *self.parents[2];
            Tensor4<T> dx, dw, db;
            kernels::conv2d_backward(px.value, pw.value, self.grad, opt, px.requires_grad ? &dx : nullptr,
                                     pw.requires_grad ? &dw : nullptr, pb.requires_grad ? &db : nullptr);
            if (px.requires_grad) px.accumulate(dx);
            if (pw.requires_grad) pw.accumulate(dw);
            if (pb.requires_grad) pb.accumulate(Tensor4<T>(pb.value.shape(), std::move(db.storage())));
        });
    }
    return make_result<T>(std::move(y), "conv2d", {x, kernel}, [opt](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Tensor4<T> dx, dw;
        kernels::conv2d_backward(px.value, pw.value, self.grad, opt, px.requires_grad ? &dx : nullptr,
                                 pw.requires_grad ? &dw : nullptr, static_cast<Tensor4<T>*>(nullptr));
        if (px.requires_grad) px.accumulate(dx);
        if (pw.requires_grad) pw.accumulate(dw);
    });
}

}  // namespace flashcast
