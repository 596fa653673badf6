#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flashcast/autodiff.hpp"

namespace flashcast {

struct NamedVariable {
    std::string name;
    Variable<double> var;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor for the relative error, so coordinates whose true gradient is ~0 are
    // judged against round-off of the central difference rather than against themselves.
    double denominator_floor = 1e-6;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
    bool passed = false;
};

inline double gradient_relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

// Compares the reverse-mode gradient of the scalar f() with central differences over every
// coordinate of params. f must be deterministic; it is re-evaluated with grad mode off.
inline GradCheckReport finite_diff_check(const std::function<Variable<double>()>& f,
                                        std::vector<NamedVariable> params, const GradCheckOptions& opt = {}) {
    for (auto& p : params) {
        p.var.set_requires_grad(true);
        p.var.zero_grad();
    }
    const Variable<double> root = f();
    if (!std::isfinite(root.value()[0])) throw GradCheckError("f is non-finite at the unperturbed point");
    backward(root);

    GradCheckReport report;
    const auto eval = [&](const NamedVariable& p, std::size_t i) {
        NoGradGuard guard;
        const double v = f().value()[0];
        if (!std::isfinite(v)) {
            throw GradCheckError("f is non-finite after perturbing " + p.name + "[" + std::to_string(i) + "]");
        }
        return v;
    };
    for (auto& p : params) {
        Tensor4<double>& x = p.var.mutable_value();
        const Tensor4<double> analytic = p.var.has_grad() ? p.var.grad() : Tensor4<double>(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            x[i] = orig + opt.step;
            const double up = eval(p, i);
            x[i] = orig - opt.step;
            const double down = eval(p, i);
            x[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic[i];
            const double rel = gradient_relative_error(a, numeric, opt.denominator_floor);
            report.max_abs_error = std::max(report.max_abs_error, std::abs(a - numeric));
            if (rel > report.max_rel_error || report.coordinates == 0) {
                report.max_rel_error = rel;
                report.worst_param = p.name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
            ++report.coordinates;
        }
    }
    report.passed = report.max_rel_error < opt.tolerance;
    return report;
}

}  // namespace flashcast
