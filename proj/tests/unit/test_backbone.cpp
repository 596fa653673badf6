#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "flashcast/grad_check.hpp"
#include "flashcast/loss.hpp"
#include "flashcast/model.hpp"
#include "test_support.hpp"

using namespace flashcast;
using namespace testing_support;

namespace {

using V = Variable<double>;

// Parameter count written out layer by layer from the architecture description.
std::size_t expected_count(const ModelConfig& c) {
    auto separable = [](std::size_t cin, std::size_t cout) { return cin * 9 + cin + cout * cin + cout + 2 * cout; };
    auto block = [&](std::size_t ch) {
        const std::size_t gc = ch / c.branch_denominator;
        const std::size_t hidden = 4 * ch;
        std::size_t n = 2 * ch;
        n += 2 * (gc * c.band_kernel + gc) + (gc * 9 + gc);
        n += hidden * (ch / c.pointwise_groups) + hidden;
        n += ch * (hidden / c.pointwise_groups) + ch;
        if (c.se_enabled) n += 2 * ch * std::max<std::size_t>(1, ch / c.se_reduction);
        if (c.layer_scale) n += ch;
        return n;
    };
    std::size_t n = separable(c.in_channels, c.stage_widths[0]);
    std::size_t width = c.stage_widths[0];
    for (std::size_t s = 0; s < 4; ++s) {
        n += separable(width, c.stage_widths[s]);
        width = c.stage_widths[s];
        n += c.stage_depths[s] * block(width);
    }
    return n + 2 * (width + 1);
}

template <typename T>
bool same_params(ModelParams<T>& a, ModelParams<T>& b) {
    auto pa = a.named_params();
    auto pb = b.named_params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name || !bit_equal(pa[i].var.value(), pb[i].var.value())) return false;
    }
    return true;
}

ModelOutput<double> run(const ModelParams<double>& p, const Tensor4<double>& x, bool training = false,
                        std::uint64_t seed = 0) {
    Rng rng(seed);
    return forward(p, V::constant(x), training, rng);
}

// Batch element b of a (B, C, H, W) tensor.
Tensor4<double> batch_item(const Tensor4<double>& t, std::size_t b) {
    const auto s = t.shape();
    const std::size_t n = s.c * s.h * s.w;
    return Tensor4<double>({1, s.c, s.h, s.w}, std::vector<double>(t.data() + b * n, t.data() + (b + 1) * n));
}

}  // namespace

TEST_SUITE("initialisation") {
    TEST_CASE("tiny configuration has the closed-form parameter count") {
        auto p = init_params<double>(ModelConfig::tiny(), 1);
        CHECK(expected_count(ModelConfig::tiny()) == 3256);
        CHECK(p.parameter_count() == 3256);
    }

    TEST_CASE("parameter count follows the architecture across configurations") {
        Rng rng(2);
        for (int t = 0; t < 12; ++t) {
            ModelConfig c;
            c.in_channels = 1 + uniform_index(rng, 9);
            for (std::size_t s = 0; s < 4; ++s) {
                c.stage_widths[s] = 2 * (1 + uniform_index(rng, 12));
                c.stage_depths[s] = uniform_index(rng, 3);
            }
            c.se_enabled = uniform_index(rng, 2) == 1;
            c.se_reduction = 1 + uniform_index(rng, 8);
            c.layer_scale = uniform_index(rng, 2) == 1;
            c.band_kernel = 2 * uniform_index(rng, 6) + 1;
            c.branch_denominator = 1 + uniform_index(rng, 8);
            c.pointwise_groups = 1 + uniform_index(rng, 2);
            auto p = init_params<double>(c, 3);
            CHECK(p.parameter_count() == expected_count(c));
        }
    }

    TEST_CASE("default configuration builds with finite weights") {
        auto p = init_params<float>(ModelConfig{}, 42);
        CHECK(p.parameter_count() == expected_count(ModelConfig{}));
        for (auto& np : p.named_params()) CHECK(np.var.value().all_finite());
    }

    TEST_CASE("fixed seed is bit-identical, different seeds differ") {
        auto a = init_params<double>(ModelConfig::tiny(), 7);
        auto b = init_params<double>(ModelConfig::tiny(), 7);
        auto c = init_params<double>(ModelConfig::tiny(), 8);
        CHECK(same_params(a, b));
        CHECK_FALSE(same_params(a, c));
    }

    TEST_CASE("layer scale, norm affine and biases start at their constants") {
        auto p = init_params<double>(ModelConfig::tiny(), 9);
        for (auto& np : p.named_params()) {
            const auto& v = np.var.value().values();
            if (np.role == ParamRole::LayerScale) {
                for (double g : v) CHECK(g == 1e-6);
            } else if (np.role == ParamRole::Bias) {
                for (double g : v) CHECK(g == 0.0);
            } else if (np.name.ends_with(".scale")) {
                for (double g : v) CHECK(g == 1.0);
            } else if (np.name.ends_with(".shift")) {
                for (double g : v) CHECK(g == 0.0);
            }
        }
    }

    TEST_CASE("conv weights follow a truncated He normal") {
        auto p = init_params<double>(ModelConfig{}, 11);
        // stages.2 expand weights: fan_in = 192, plenty of samples
        const auto& w = p.stages[2].blocks[0].expand_weight.value();
        const double sd = std::sqrt(2.0 / 192.0);
        double m = 0, m2 = 0;
        for (double v : w.values()) {
            CHECK(std::abs(v) <= 2.0 * sd);
            m += v;
            m2 += v * v;
        }
        m /= static_cast<double>(w.size());
        const double var = m2 / static_cast<double>(w.size()) - m * m;
        // variance of a normal truncated at two standard deviations is about 0.774 sd^2
        CHECK(std::abs(m) < 0.01 * sd);
        CHECK(var / (sd * sd) == doctest::Approx(0.774).epsilon(0.03));
    }

    TEST_CASE("invalid configurations are rejected") {
        ModelConfig c = ModelConfig::tiny();
        c.band_kernel = 4;
        CHECK_THROWS_AS(init_params<double>(c, 0), ConfigError);
        c = ModelConfig::tiny();
        c.pointwise_groups = 3;
        CHECK_THROWS_AS(init_params<double>(c, 0), ConfigError);
        c = ModelConfig::tiny();
        c.drop_path_rate = 1.0;
        CHECK_THROWS_AS(init_params<double>(c, 0), ConfigError);
    }

    TEST_CASE("drop path rate rises linearly across blocks") {
        ModelConfig c = ModelConfig::tiny();
        c.drop_path_rate = 0.2;
        auto p = init_params<double>(c, 0);
        std::vector<double> rates;
        for (auto& s : p.stages)
            for (auto& b : s.blocks) rates.push_back(b.drop_path);
        REQUIRE(rates.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) CHECK(rates[i] == doctest::Approx(0.2 * i / 4.0));
    }
}

TEST_SUITE("forward") {
    TEST_CASE("grid-scale input keeps its spatial size") {
        auto p = init_params<double>(ModelConfig::tiny(), 1);
        Rng rng(1);
        const auto out = run(p, random_tensor({2, 9, 120, 360}, rng));
        CHECK(out.logits.shape() == Shape4{2, 1, 120, 360});
        CHECK(out.magnitudes.shape() == Shape4{2, 1, 120, 360});
        for (double v : out.magnitudes.value().values()) CHECK(v > 0.0);
    }

    TEST_CASE("shape contract over random configurations and sizes") {
        Rng rng(2);
        for (int t = 0; t < 10; ++t) {
            ModelConfig c = ModelConfig::tiny();
            c.resolution_preserving = t % 2 == 0;
            c.band_kernel = 2 * uniform_index(rng, 3) + 3;
            c.se_enabled = t % 3 == 0;
            auto p = init_params<double>(c, static_cast<std::uint64_t>(t));
            const Shape4 xs{1 + uniform_index(rng, 2), 9, 1 + uniform_index(rng, 13), 1 + uniform_index(rng, 13)};
            const auto out = run(p, random_tensor(xs, rng));
            CHECK(out.logits.shape() == Shape4{xs.n, 1, xs.h, xs.w});
            CHECK(out.magnitudes.shape() == Shape4{xs.n, 1, xs.h, xs.w});
        }
    }

    TEST_CASE("zero input gives the head biases") {
        auto p = init_params<double>(ModelConfig::tiny(), 3);
        p.cls_bias.mutable_value().fill(0.3);
        const auto out = run(p, Tensor4<double>({1, 9, 5, 6}));
        for (double v : out.logits.value().values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
        for (double v : out.magnitudes.value().values()) CHECK(v == doctest::Approx(scalar::softplus(0.0)).epsilon(1e-12));
    }

    TEST_CASE("wrong channel count names the channel axis") {
        auto p = init_params<double>(ModelConfig::tiny(), 3);
        try {
            run(p, Tensor4<double>({1, 8, 4, 4}));
            FAIL("expected DimensionError");
        } catch (const DimensionError& e) {
            CHECK(e.axis() == "channels");
        }
    }

    TEST_CASE("evaluation forward is deterministic") {
        auto p = init_params<double>(ModelConfig::tiny(), 4);
        Rng rng(4);
        const auto x = random_tensor({2, 9, 7, 9}, rng);
        CHECK(bit_equal(run(p, x).logits.value(), run(p, x).logits.value()));
        CHECK(bit_equal(run(p, x, true, 5).magnitudes.value(), run(p, x, true, 5).magnitudes.value()));
    }

    TEST_CASE("batch elements are processed independently") {
        ModelConfig c = ModelConfig::tiny();
        c.se_enabled = true;
        auto p = init_params<double>(c, 5);
        Rng rng(5);
        const auto x = random_tensor({3, 9, 6, 7}, rng);
        const auto full = run(p, x).logits.value();
        const std::array<std::size_t, 3> perm{2, 0, 1};
        Tensor4<double> xp(x.shape());
        const std::size_t n = 9 * 6 * 7;
        for (std::size_t b = 0; b < 3; ++b) std::copy_n(x.data() + perm[b] * n, n, xp.data() + b * n);
        const auto permuted = run(p, xp).logits.value();
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK(max_rel_diff(batch_item(permuted, b), batch_item(full, perm[b])) <= 1e-12);
            CHECK(max_rel_diff(run(p, batch_item(x, b)).logits.value(), batch_item(full, b)) <= 1e-12);
        }
    }

    TEST_CASE("single and double precision agree") {
        auto pd = init_params<double>(ModelConfig::tiny(), 6);
        for (auto& np : pd.named_params())
            if (np.role == ParamRole::LayerScale) np.var.mutable_value().fill(0.5);
        auto pf = cast_params<float>(pd);
        Rng rng(6);
        const auto x = random_tensor({1, 9, 8, 10}, rng);
        Rng r2(0);
        const auto of = forward(pf, Variable<float>::constant(x.cast<float>()), false, r2);
        const auto od = run(pd, x);
        CHECK(scaled_max_diff(of.logits.value().cast<double>(), od.logits.value()) < 1e-4);
        CHECK(scaled_max_diff(of.magnitudes.value().cast<double>(), od.magnitudes.value()) < 1e-4);
    }
}

TEST_SUITE("predict_density") {
    TEST_CASE("gating is strict at the threshold") {
        const Tensor4<double> logits({1, 1, 1, 3}, {0.0, 2.0, -2.0});
        const Tensor4<double> mags({1, 1, 1, 3}, {4.0, 4.0, 4.0});
        const auto g = predict_density(logits, mags, DensityMode::Gated, 0.5);
        CHECK(g[0] == 0.0);
        CHECK(g[1] == 4.0);
        CHECK(g[2] == 0.0);
        const auto e = predict_density(logits, mags, DensityMode::Expected);
        CHECK(e[0] == doctest::Approx(2.0));
        CHECK(e[1] == doctest::Approx(4.0 / (1.0 + std::exp(-2.0))));
    }

    TEST_CASE("threshold must lie strictly inside (0, 1)") {
        const Tensor4<double> t({1, 1, 1, 1});
        CHECK_THROWS_AS(predict_density(t, t, DensityMode::Gated, 0.0), ConfigError);
        CHECK_THROWS_AS(predict_density(t, t, DensityMode::Gated, 1.0), ConfigError);
        CHECK_THROWS_AS(parse_density_mode("median"), ConfigError);
        CHECK(parse_density_mode("expected") == DensityMode::Expected);
    }

    TEST_CASE("outputs are non-negative") {
        Rng rng(7);
        const auto logits = random_tensor({2, 1, 4, 4}, rng, -5, 5);
        const auto mags = random_tensor({2, 1, 4, 4}, rng, 0, 3);
        for (auto mode : {DensityMode::Gated, DensityMode::Expected}) {
            const auto d = predict_density(logits, mags, mode);
            for (double v : d.values()) CHECK(v >= 0.0);
        }
    }
}

TEST_SUITE("model gradient") {
    // Layer scale is raised from its tiny default so that block parameters move the loss by more
    // than rounding noise under central differences.
    void check_model_gradient(ModelConfig c, Shape4 xs, double denominator_floor) {
        c.layer_scale_init = 0.5;
        auto p = init_params<double>(c, 21);
        Rng rng(21);
        const auto x = random_tensor(xs, rng);
        Tensor4<double> y(Shape4{xs.n, 1, xs.h, xs.w});
        Tensor4<double> mask(y.shape(), 1.0);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = uniform01(rng) < 0.4 ? 0.0 : 5.0 * uniform01(rng);
            if (i % 7 == 3) mask[i] = 0.0;
        }
        LossConfig lc;
        lc.anomaly_threshold = 3.0;
        auto params = p.named_params();
        std::vector<NamedVariable> named;
        for (auto& np : params) named.push_back({np.name, np.var});
        GradCheckOptions opt;
        opt.denominator_floor = denominator_floor;
        const auto rep = finite_diff_check(
            [&] {
                Rng drop(3);
                const auto out = forward(p, V::constant(x), true, drop);
                return total_loss(out.logits, out.magnitudes, y, mask, lc).total;
            },
            named, opt);
        INFO(rep.worst_param, "[", rep.worst_index, "] analytic ", rep.worst_analytic, " numeric ", rep.worst_numeric,
             " rel ", rep.max_rel_error);
        CHECK(rep.coordinates == static_cast<std::size_t>(p.parameter_count()));
        CHECK(rep.max_rel_error < 1e-4);
    }

    TEST_CASE("tiny model on an 8x16 grid, every parameter") {
        check_model_gradient(ModelConfig::tiny(), {1, 9, 8, 16}, GradCheckOptions{}.denominator_floor);
    }

    TEST_CASE("tiny model with a batch of two") {
        check_model_gradient(ModelConfig::tiny(), {2, 9, 5, 6}, GradCheckOptions{}.denominator_floor);
    }

    TEST_CASE("tiny model with SE, drop path and strided stages") {
        ModelConfig c = ModelConfig::tiny();
        c.se_enabled = true;
        c.se_reduction = 2;
        c.drop_path_rate = 0.3;
        c.resolution_preserving = false;
        // A few stage-4 weights have gradients near 1e-6, where rounding noise in the loss
        // (about 1e-14 absolute, divided by the step) is comparable to the gradient itself.
        check_model_gradient(c, {2, 9, 5, 6}, 1e-4);
    }
}
