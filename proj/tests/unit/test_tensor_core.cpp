#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "flashcast/grad_check.hpp"
#include "flashcast/ops.hpp"
#include "test_support.hpp"

using namespace flashcast;
using namespace testing_support;

namespace {

using V = Variable<double>;

V param(Tensor4<double> t) { return V::leaf(std::move(t), true); }

// sum(x * r) for a fixed random r: a scalar whose gradient exercises every output element.
V probe(const V& y, Rng& rng) {
    return sum(mul(y, V::constant(random_tensor(y.shape(), rng))));
}

void require_grad_ok(const std::function<V()>& f, std::vector<NamedVariable> params) {
    const auto r = finite_diff_check(f, std::move(params));
    INFO("worst ", r.worst_param, "[", r.worst_index, "] analytic=", r.worst_analytic, " numeric=", r.worst_numeric,
         " rel=", r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-4);
}

}  // namespace

TEST_SUITE("conv2d") {
    TEST_CASE("1x1 identity kernel reproduces the input") {
        Rng rng(1);
        const auto x = random_tensor({2, 3, 4, 5}, rng);
        Tensor4<double> w({3, 3, 1, 1});
        for (std::size_t c = 0; c < 3; ++c) w(c, c, 0, 0) = 1.0;
        const auto y = conv2d(V::constant(x), V::constant(w), std::optional<V>{});
        CHECK(bit_equal(y.value(), x));
    }

    TEST_CASE("zero kernel without bias gives zeros") {
        Rng rng(2);
        const auto x = random_tensor({1, 2, 5, 5}, rng);
        const auto y = conv2d(V::constant(x), V::constant(Tensor4<double>({3, 2, 3, 3})), std::optional<V>{},
                              Conv2dOptions::same(3, 3));
        for (double v : y.value().values()) CHECK(v == 0.0);
    }

    TEST_CASE("matches the nested-loop oracle") {
        Rng rng(3);
        const auto x = random_tensor({1, 2, 5, 5}, rng);
        const auto w = random_tensor({3, 2, 3, 3}, rng);
        const auto y = conv2d(V::constant(x), V::constant(w), std::optional<V>{}, Conv2dOptions::same(3, 3));
        const auto ref = oracle_conv2d(x, w, nullptr, 1, 1, 1, 1);
        CHECK(y.shape() == ref.shape());
        CHECK(max_rel_diff(y.value(), ref) < 1e-10);
    }

    TEST_CASE("strided, grouped, biased and rectangular variants match the oracle") {
        Rng rng(4);
        struct Case {
            Shape4 x, w;
            std::size_t stride, ph, pw, groups;
        };
        for (const Case& c : {Case{{2, 4, 7, 6}, {6, 2, 3, 3}, 2, 1, 1, 2}, Case{{1, 4, 6, 9}, {4, 1, 1, 5}, 1, 0, 2, 4},
                              Case{{1, 3, 8, 5}, {3, 1, 5, 1}, 1, 2, 0, 3}, Case{{2, 6, 4, 4}, {4, 3, 1, 1}, 1, 0, 0, 2},
                              Case{{1, 2, 5, 5}, {2, 2, 2, 2}, 2, 0, 0, 1}}) {
            const auto x = random_tensor(c.x, rng);
            const auto w = random_tensor(c.w, rng);
            const auto bt = random_tensor({1, c.w.n, 1, 1}, rng);
            std::vector<double> bias(bt.values().begin(), bt.values().end());
            Conv2dOptions opt{c.stride, c.stride, c.ph, c.pw, c.groups};
            const auto y = conv2d(V::constant(x), V::constant(w), std::optional{V::constant(bt)}, opt);
            const auto ref = oracle_conv2d(x, w, &bias, c.stride, c.ph, c.pw, c.groups);
            REQUIRE(y.shape() == ref.shape());
            CHECK(max_rel_diff(y.value(), ref) < 1e-10);
        }
    }

    TEST_CASE("output spatial size follows floor((H + 2p - k) / s) + 1") {
        const auto y = conv2d(V::constant(Tensor4<double>({1, 1, 10, 7})), V::constant(Tensor4<double>({1, 1, 3, 3})),
                              std::optional<V>{}, Conv2dOptions{3, 2, 1, 0, 1});
        CHECK(y.shape().h == (10 + 2 - 3) / 3 + 1);
        CHECK(y.shape().w == (7 - 3) / 2 + 1);
    }

    TEST_CASE("linearity in the input") {
        Rng rng(5);
        const auto x1 = random_tensor({1, 2, 6, 6}, rng);
        const auto x2 = random_tensor({1, 2, 6, 6}, rng);
        const auto w = V::constant(random_tensor({3, 2, 3, 3}, rng));
        const double a = 0.7, b = -1.3;
        Tensor4<double> combo(x1.shape());
        for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * x1[i] + b * x2[i];
        const auto opt = Conv2dOptions::same(3, 3);
        const auto lhs = conv2d(V::constant(combo), w, std::optional<V>{}, opt).value();
        const auto y1 = conv2d(V::constant(x1), w, std::optional<V>{}, opt).value();
        const auto y2 = conv2d(V::constant(x2), w, std::optional<V>{}, opt).value();
        Tensor4<double> rhs(y1.shape());
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * y1[i] + b * y2[i];
        CHECK(scaled_max_diff(lhs, rhs) < 1e-10);
    }

    TEST_CASE("shape errors name the offending axis") {
        const V x = V::constant(Tensor4<double>({1, 3, 4, 4}));
        try {
            conv2d(x, V::constant(Tensor4<double>({2, 2, 1, 1})), std::optional<V>{});
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            CHECK(e.axis() == "channels");
        }
        try {
            Conv2dOptions opt;
            opt.groups = 2;
            conv2d(x, V::constant(Tensor4<double>({2, 1, 1, 1})), std::optional<V>{}, opt);
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            CHECK(e.axis() == "channels");
        }
        CHECK_THROWS_AS(conv2d(x, V::constant(Tensor4<double>({1, 3, 7, 1})), std::optional<V>{}), DimensionError);
    }

    TEST_CASE("gradient check for dense, depthwise, strided and pointwise-grouped convs") {
        Rng rng(6);
        struct Case {
            Shape4 x, w;
            Conv2dOptions opt;
        };
        for (const Case& c : {Case{{2, 2, 5, 5}, {3, 2, 3, 3}, Conv2dOptions::same(3, 3)},
                              Case{{1, 3, 5, 6}, {3, 1, 1, 5}, Conv2dOptions::same(1, 5, 3)},
                              Case{{1, 2, 7, 7}, {2, 2, 3, 3}, Conv2dOptions::same(3, 3, 1, 2)},
                              Case{{2, 4, 3, 3}, {6, 2, 1, 1}, Conv2dOptions{1, 1, 0, 0, 2}}}) {
            V x = param(random_tensor(c.x, rng));
            V w = param(random_tensor(c.w, rng));
            V b = param(random_tensor({1, c.w.n, 1, 1}, rng));
            Rng probe_rng(99);
            const auto r = random_tensor(conv2d(x, w, std::optional{b}, c.opt).shape(), probe_rng);
            require_grad_ok([&] { return sum(mul(conv2d(x, w, std::optional{b}, c.opt), V::constant(r))); },
                            {{"x", x}, {"w", w}, {"b", b}});
        }
    }
}

TEST_SUITE("layer_norm_cf") {
    TEST_CASE("constant across channels gives zeros") {
        Tensor4<double> x({1, 4, 2, 2}, 3.25);
        const auto y = layer_norm_cf(V::constant(x), V::constant(Tensor4<double>({1, 4, 1, 1}, 1.0)),
                                     V::constant(Tensor4<double>({1, 4, 1, 1})), 1e-6);
        for (double v : y.value().values()) CHECK(v == 0.0);
    }

    TEST_CASE("two channels (0, 2) standardize to (-1, 1)") {
        Tensor4<double> x({1, 2, 1, 1});
        x[1] = 2.0;
        const auto y = layer_norm_cf(V::constant(x), V::constant(Tensor4<double>({1, 2, 1, 1}, 1.0)),
                                     V::constant(Tensor4<double>({1, 2, 1, 1})), 1e-14);
        CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-12));
    }

    TEST_CASE("per-position moments before affine") {
        Rng rng(7);
        const auto x = random_tensor({2, 4, 3, 3}, rng, -3, 5);
        const auto y = layer_norm_cf(V::constant(x), V::constant(Tensor4<double>({1, 4, 1, 1}, 1.0)),
                                     V::constant(Tensor4<double>({1, 4, 1, 1})), 1e-6).value();
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) {
                    double m = 0, v = 0;
                    for (std::size_t c = 0; c < 4; ++c) m += y(b, c, i, j) / 4;
                    for (std::size_t c = 0; c < 4; ++c) v += (y(b, c, i, j) - m) * (y(b, c, i, j) - m) / 4;
                    CHECK(std::abs(m) < 1e-6);
                    CHECK(std::abs(v - 1.0) < 1e-4);
                }
    }

    TEST_CASE("invariant to a per-position shift across channels") {
        Rng rng(8);
        const auto x = random_tensor({1, 5, 3, 4}, rng);
        auto shifted = x;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const double k = 10.0 * uniform01(rng) - 5.0;
                for (std::size_t c = 0; c < 5; ++c) shifted(0, c, i, j) += k;
            }
        const V g = V::constant(random_tensor({1, 5, 1, 1}, rng));
        const V s = V::constant(random_tensor({1, 5, 1, 1}, rng));
        const auto a = layer_norm_cf(V::constant(x), g, s, 1e-6).value();
        const auto b = layer_norm_cf(V::constant(shifted), g, s, 1e-6).value();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6);
    }

    TEST_CASE("zero channels is a dimension error") {
        CHECK_THROWS_AS(layer_norm_cf(V::constant(Tensor4<double>({1, 0, 2, 2})), V::constant(Tensor4<double>()),
                                      V::constant(Tensor4<double>()), 1e-6),
                        DimensionError);
    }

    TEST_CASE("gradient check") {
        Rng rng(9);
        V x = param(random_tensor({2, 4, 3, 2}, rng));
        V g = param(random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5));
        V s = param(random_tensor({1, 4, 1, 1}, rng));
        Rng pr(10);
        const auto r = random_tensor(x.shape(), pr);
        require_grad_ok([&] { return sum(mul(layer_norm_cf(x, g, s, 1e-6), V::constant(r))); },
                        {{"x", x}, {"scale", g}, {"shift", s}});
    }
}

TEST_SUITE("activations") {
    TEST_CASE("gelu spot values") {
        Tensor4<double> x({1, 1, 1, 3});
        x[0] = 0.0;
        x[1] = 10.0;
        x[2] = 1.0;
        const auto y = gelu(V::constant(x)).value();
        CHECK(y[0] == 0.0);
        CHECK(std::abs(y[1] - 10.0) < 1e-6);
        const double oracle = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
        CHECK(y[2] == doctest::Approx(oracle).epsilon(1e-14));
        CHECK(y[2] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    }

    TEST_CASE("gradient checks for gelu, sigmoid, relu, softplus, scale, add, mul") {
        Rng rng(11);
        V a = param(random_tensor({1, 2, 3, 3}, rng, -3, 3));
        V b = param(random_tensor({1, 2, 3, 3}, rng, -3, 3));
        // keep relu inputs away from the kink
        for (auto& v : b.mutable_value().values()) v += v >= 0 ? 0.1 : -0.1;
        Rng pr(12);
        const auto r = random_tensor(a.shape(), pr);
        const V rc = V::constant(r);
        require_grad_ok([&] { return sum(mul(gelu(a), rc)); }, {{"a", a}});
        require_grad_ok([&] { return sum(mul(sigmoid(a), rc)); }, {{"a", a}});
        require_grad_ok([&] { return sum(mul(relu(b), rc)); }, {{"b", b}});
        require_grad_ok([&] { return sum(mul(softplus(a), rc)); }, {{"a", a}});
        require_grad_ok([&] { return sum(mul(scale(add(a, b), -2.5), rc)); }, {{"a", a}, {"b", b}});
        require_grad_ok([&] { return sum(mul(mul(a, b), rc)); }, {{"a", a}, {"b", b}});
    }

    TEST_CASE("softplus does not overflow") {
        Tensor4<double> x({1, 1, 1, 2});
        x[0] = 800.0;
        x[1] = -800.0;
        const auto y = softplus(V::constant(x)).value();
        CHECK(y[0] == doctest::Approx(800.0));
        CHECK(y[1] >= 0.0);
        CHECK(std::isfinite(y[1]));
    }
}

TEST_SUITE("global_avg_pool") {
    TEST_CASE("constant and arithmetic mean") {
        Tensor4<double> c({1, 1, 3, 3}, 4.5);
        CHECK(global_avg_pool(V::constant(c)).value()[0] == 4.5);
        Tensor4<double> q({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
        CHECK(global_avg_pool(V::constant(q)).value()[0] == 2.5);
    }

    TEST_CASE("matches a scalar mean") {
        Rng rng(13);
        const auto x = random_tensor({2, 3, 4, 5}, rng);
        const auto y = global_avg_pool(V::constant(x)).value();
        CHECK(y.shape() == Shape4{2, 3, 1, 1});
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t i = 0; i < 4; ++i)
                    for (std::size_t j = 0; j < 5; ++j) s += x(b, c, i, j);
                CHECK(std::abs(y(b, c, 0, 0) - s / 20.0) < 1e-12);
            }
    }

    TEST_CASE("empty spatial extent is an error") {
        CHECK_THROWS_AS(global_avg_pool(V::constant(Tensor4<double>({1, 2, 0, 3}))), DimensionError);
    }

    TEST_CASE("gradient spreads 1/(H*W)") {
        Rng rng(14);
        V x = param(random_tensor({2, 3, 2, 3}, rng));
        auto y = sum(global_avg_pool(x));
        backward(y);
        for (double g : x.grad().values()) CHECK(g == doctest::Approx(1.0 / 6.0));
        require_grad_ok([&] { Rng r(1); return probe(global_avg_pool(x), r); }, {{"x", x}});
    }
}

TEST_SUITE("structural ops") {
    TEST_CASE("split then concat is the identity, with gradients") {
        Rng rng(15);
        V x = param(random_tensor({2, 7, 3, 2}, rng));
        auto parts = split_channels(x, {2, 0, 4, 1});
        CHECK(parts[1].shape().c == 0);
        CHECK(bit_equal(concat_channels(parts).value(), x.value()));
        CHECK_THROWS_AS(split_channels(x, {2, 2}), DimensionError);
        require_grad_ok(
            [&] {
                auto p = split_channels(x, {3, 4});
                Rng r(2);
                return probe(concat_channels(std::vector<V>{gelu(p[1]), p[0]}), r);
            },
            {{"x", x}});
    }

    TEST_CASE("channel_mul broadcasts per channel and per sample") {
        Rng rng(16);
        V x = param(random_tensor({2, 3, 2, 2}, rng));
        V shared = param(random_tensor({1, 3, 1, 1}, rng));
        V per_sample = param(random_tensor({2, 3, 1, 1}, rng));
        const auto y = channel_mul(x, shared).value();
        CHECK(y(1, 2, 1, 0) == x.value()(1, 2, 1, 0) * shared.value()[2]);
        require_grad_ok([&] { Rng r(3); return probe(channel_mul(x, shared), r); }, {{"x", x}, {"v", shared}});
        require_grad_ok([&] { Rng r(4); return probe(channel_mul(x, per_sample), r); }, {{"x", x}, {"v", per_sample}});
        CHECK_THROWS_AS(channel_mul(x, V::constant(Tensor4<double>({1, 2, 1, 1}))), DimensionError);
    }

    TEST_CASE("bilinear upsampling: constants preserved, gradient checked") {
        Tensor4<double> c({1, 1, 3, 4}, 2.0);
        const auto up = upsample_bilinear(V::constant(c), 6, 8).value();
        for (double v : up.values()) CHECK(v == doctest::Approx(2.0));
        Rng rng(17);
        V x = param(random_tensor({1, 2, 3, 4}, rng));
        require_grad_ok([&] { Rng r(5); return probe(upsample_bilinear(x, 5, 9), r); }, {{"x", x}});
    }
}

TEST_SUITE("drop_path") {
    TEST_CASE("identity when p = 0 or in evaluation") {
        Rng rng(18);
        V x = V::constant(random_tensor({4, 2, 2, 2}, rng));
        CHECK(bit_equal(drop_path(x, 0.0, true, rng).value(), x.value()));
        CHECK(bit_equal(drop_path(x, 0.0, false, rng).value(), x.value()));
        CHECK(bit_equal(drop_path(x, 0.7, false, rng).value(), x.value()));
        CHECK_THROWS_AS(drop_path(x, 1.0, true, rng), ConfigError);
    }

    TEST_CASE("Monte Carlo: kept scaling has mean 1 at p = 0.5") {
        const std::size_t n = 10000;
        Rng rng(19);
        const auto y = drop_path(V::constant(Tensor4<double>({n, 1, 1, 1}, 1.0)), 0.5, true, rng).value();
        double mean = 0;
        for (double v : y.values()) {
            CHECK((v == 0.0 || v == 2.0));
            mean += v / n;
        }
        // Each factor is 0 or 2 with equal probability: variance 1, standard error 1/sqrt(n).
        const double se = 1.0 / std::sqrt(static_cast<double>(n));
        CHECK(std::abs(mean - 1.0) < 3.0 * se);
    }
}

TEST_SUITE("autodiff and grad check") {
    TEST_CASE("f(x) = sum x^2 at (1, 2) has gradient (2, 4)") {
        V x = param(Tensor4<double>({1, 1, 1, 2}, std::vector<double>{1.0, 2.0}));
        const auto r = finite_diff_check([&] { return sum(mul(x, x)); }, {{"x", x}});
        CHECK(r.max_rel_error < 1e-8);
        CHECK(r.passed);
        x.zero_grad();
        backward(sum(mul(x, x)));
        CHECK(x.grad()[0] == doctest::Approx(2.0));
        CHECK(x.grad()[1] == doctest::Approx(4.0));
    }

    TEST_CASE("shared subexpressions accumulate gradients once per use") {
        V x = param(Tensor4<double>({1, 1, 1, 1}, 3.0));
        V y = mul(x, x);
        V z = add(y, y);  // 2 x^2
        backward(sum(z));
        CHECK(x.grad()[0] == doctest::Approx(12.0));
    }

    TEST_CASE("topological order visits each node once, parents first") {
        V x = param(Tensor4<double>({1, 1, 1, 1}, 1.0));
        V a = gelu(x);
        V b = mul(a, a);
        V c = add(b, a);
        auto order = topological_order(c.node());
        CHECK(order.size() == 4);
        CHECK(order.front() == x.node());
        CHECK(order.back() == c.node());
    }

    TEST_CASE("non-finite objective is reported with its location") {
        V x = param(Tensor4<double>({1, 1, 1, 1}, 0.0));
        const auto f = [&] {
            const double v = x.value()[0];
            return v > 0 ? V::constant(Tensor4<double>({1, 1, 1, 1}, NAN)) : sum(x);
        };
        try {
            finite_diff_check(f, {{"x", x}});
            FAIL("expected GradCheckError");
        } catch (const GradCheckError& e) {
            CHECK(std::string(e.what()).find("x[0]") != std::string::npos);
        }
    }

    TEST_CASE("no-grad mode records nothing") {
        V x = param(Tensor4<double>({1, 1, 1, 1}, 1.0));
        NoGradGuard g;
        V y = gelu(x);
        CHECK_FALSE(y.requires_grad());
    }

    TEST_CASE("operations are deterministic") {
        Rng r1(20), r2(20);
        const auto x = random_tensor({1, 3, 6, 6}, r1);
        const auto w = random_tensor({3, 3, 3, 3}, r1);
        const auto x2 = random_tensor({1, 3, 6, 6}, r2);
        const auto w2 = random_tensor({3, 3, 3, 3}, r2);
        const auto a = gelu(conv2d(V::constant(x), V::constant(w), std::optional<V>{}, Conv2dOptions::same(3, 3))).value();
        const auto b = gelu(conv2d(V::constant(x2), V::constant(w2), std::optional<V>{}, Conv2dOptions::same(3, 3))).value();
        CHECK(bit_equal(a, b));
    }

    TEST_CASE("float storage still accumulates in double") {
        // 1 + 1e-8 * 1e4 would be lost in a float accumulator summing ones first.
        Tensor4<float> x({1, 1, 1, 10001}, 1e-8f);
        x[0] = 1.0f;
        const auto s = sum(Variable<float>::constant(x)).value()[0];
        CHECK(s == doctest::Approx(1.0001f).epsilon(1e-6));
    }
}
