#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "flashcast/grad_check.hpp"
#include "flashcast/layers.hpp"
#include "flashcast/model.hpp"
#include "test_support.hpp"

using namespace flashcast;
using namespace testing_support;

namespace {

using V = Variable<double>;

V param(Tensor4<double> t) { return V::leaf(std::move(t), true); }

void zero(V& v) { v.mutable_value().fill(0.0); }

void randomize(std::vector<NamedParam<double>>& ps, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& p : ps) p.var.mutable_value() = random_tensor(p.var.shape(), rng, lo, hi);
}

template <typename P>
std::vector<NamedParam<double>> params_of(P& p) {
    std::vector<NamedParam<double>> out;
    p.visit("p", [&](const std::string& n, V& v, ParamRole r) { out.push_back({n, v, r}); });
    return out;
}

std::vector<NamedVariable> as_named(std::vector<NamedParam<double>>& ps) {
    std::vector<NamedVariable> out;
    for (auto& p : ps) out.push_back({p.name, p.var});
    return out;
}

// Channels [offset, offset + n) as their own tensor.
Tensor4<double> channel_slice(const Tensor4<double>& x, std::size_t offset, std::size_t n) {
    const auto s = x.shape();
    Tensor4<double> out({s.n, n, s.h, s.w});
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) out(b, c, i, j) = x(b, offset + c, i, j);
    return out;
}

std::vector<double> flat(const Tensor4<double>& t) { return {t.values().begin(), t.values().end()}; }

// Algorithm-literal SE: s_c = mean, e = sigmoid(W2 relu(W1 s)), out_c = e_c * X_c.
Tensor4<double> oracle_se(const Tensor4<double>& x, const Tensor4<double>& w1, const Tensor4<double>& w2) {
    const auto s = x.shape();
    const std::size_t cr = w1.shape().n;
    Tensor4<double> out(s);
    for (std::size_t b = 0; b < s.n; ++b) {
        std::vector<double> sq(s.c, 0.0), hid(cr, 0.0), e(s.c, 0.0);
        for (std::size_t c = 0; c < s.c; ++c) {
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) sq[c] += x(b, c, i, j);
            sq[c] /= static_cast<double>(s.h * s.w);
        }
        for (std::size_t r = 0; r < cr; ++r) {
            for (std::size_t c = 0; c < s.c; ++c) hid[r] += w1(r, c, 0, 0) * sq[c];
            hid[r] = std::max(0.0, hid[r]);
        }
        for (std::size_t c = 0; c < s.c; ++c) {
            double z = 0;
            for (std::size_t r = 0; r < cr; ++r) z += w2(c, r, 0, 0) * hid[r];
            e[c] = 1.0 / (1.0 + std::exp(-z));
        }
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) out(b, c, i, j) = e[c] * x(b, c, i, j);
    }
    return out;
}

}  // namespace

TEST_SUITE("inception_dwconv") {
    TEST_CASE("default split gives floor(C/8) per conv branch, remainder to identity") {
        const auto s = InceptionSplit::for_channels(48);
        CHECK(s.h_band == 6);
        CHECK(s.v_band == 6);
        CHECK(s.square == 6);
        CHECK(s.identity == 30);
        const auto t = InceptionSplit::for_channels(4);
        CHECK(t.identity == 4);
    }

    TEST_CASE("zero kernels zero the conv branches and pass the identity branch") {
        Rng rng(1);
        auto p = InceptionDWParams<double>::init(rng, InceptionSplit::for_channels(16), 11);
        zero(p.h_weight);
        zero(p.v_weight);
        zero(p.sq_weight);
        const auto x = random_tensor({2, 16, 5, 7}, rng);
        const auto y = inception_dwconv(V::constant(x), p).value();
        CHECK(y.shape() == x.shape());
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 16; ++c)
                for (std::size_t i = 0; i < 5; ++i)
                    for (std::size_t j = 0; j < 7; ++j) {
                        if (c < 6) CHECK(y(b, c, i, j) == 0.0);
                        else CHECK(y(b, c, i, j) == x(b, c, i, j));
                    }
    }

    TEST_CASE("identity-only configuration returns the input") {
        Rng rng(2);
        auto p = InceptionDWParams<double>::init(rng, InceptionSplit{0, 0, 0, 5}, 11);
        const auto x = random_tensor({1, 5, 4, 4}, rng);
        CHECK(bit_equal(inception_dwconv(V::constant(x), p).value(), x));
    }

    TEST_CASE("matches per-branch scalar oracle then concatenation") {
        Rng rng(3);
        auto p = InceptionDWParams<double>::init(rng, InceptionSplit::for_channels(8), 5);
        p.h_bias.mutable_value() = random_tensor(p.h_bias.shape(), rng);
        p.v_bias.mutable_value() = random_tensor(p.v_bias.shape(), rng);
        p.sq_bias.mutable_value() = random_tensor(p.sq_bias.shape(), rng);
        const auto x = random_tensor({1, 8, 6, 6}, rng);
        const auto y = inception_dwconv(V::constant(x), p).value();
        // branch order: h-band (1 ch), v-band (1 ch), square (1 ch), identity (5 ch)
        const auto hb = flat(p.h_bias.value()), vb = flat(p.v_bias.value()), sb = flat(p.sq_bias.value());
        const auto h = oracle_conv2d(channel_slice(x, 0, 1), p.h_weight.value(), &hb, 1, 0, 2, 1);
        const auto v = oracle_conv2d(channel_slice(x, 1, 1), p.v_weight.value(), &vb, 1, 2, 0, 1);
        const auto q = oracle_conv2d(channel_slice(x, 2, 1), p.sq_weight.value(), &sb, 1, 1, 1, 1);
        CHECK(max_rel_diff(channel_slice(y, 0, 1), h) < 1e-10);
        CHECK(max_rel_diff(channel_slice(y, 1, 1), v) < 1e-10);
        CHECK(max_rel_diff(channel_slice(y, 2, 1), q) < 1e-10);
        CHECK(bit_equal(channel_slice(y, 3, 5), channel_slice(x, 3, 5)));
    }

    TEST_CASE("preserves shape for every legal split (randomized)") {
        Rng rng(4);
        for (int trial = 0; trial < 40; ++trial) {
            InceptionSplit s{uniform_index(rng, 4), uniform_index(rng, 4), uniform_index(rng, 4), uniform_index(rng, 4)};
            if (s.total() == 0) s.identity = 1;
            const std::size_t k = 2 * uniform_index(rng, 6) + 1;
            auto p = InceptionDWParams<double>::init(rng, s, k);
            const Shape4 xs{1 + uniform_index(rng, 2), s.total(), 1 + uniform_index(rng, 9), 1 + uniform_index(rng, 9)};
            CHECK(inception_dwconv(V::constant(random_tensor(xs, rng)), p).shape() == xs);
        }
    }

    TEST_CASE("channel mismatch is a dimension error") {
        Rng rng(5);
        auto p = InceptionDWParams<double>::init(rng, InceptionSplit::for_channels(8), 3);
        CHECK_THROWS_AS(inception_dwconv(V::constant(Tensor4<double>({1, 9, 3, 3})), p), DimensionError);
    }

    TEST_CASE("gradient check") {
        Rng rng(6);
        auto p = InceptionDWParams<double>::init(rng, InceptionSplit{2, 1, 2, 3}, 5);
        auto ps = params_of(p);
        randomize(ps, rng);
        V x = param(random_tensor({2, 8, 5, 6}, rng));
        const V r = V::constant(random_tensor(x.shape(), rng));
        auto named = as_named(ps);
        named.push_back({"x", x});
        const auto rep = finite_diff_check([&] { return sum(mul(inception_dwconv(x, p), r)); }, named);
        INFO(rep.worst_param, " ", rep.max_rel_error);
        CHECK(rep.passed);
    }
}

TEST_SUITE("pointwise_group_conv") {
    TEST_CASE("groups = 1 with identity weights") {
        Rng rng(7);
        const auto x = random_tensor({1, 4, 3, 3}, rng);
        Tensor4<double> w({4, 4, 1, 1});
        for (std::size_t c = 0; c < 4; ++c) w(c, c, 0, 0) = 1.0;
        CHECK(bit_equal(pointwise_group_conv(V::constant(x), V::constant(w), std::optional<V>{}, 1).value(), x));
    }

    TEST_CASE("groups = C is a per-channel scalar multiply") {
        Rng rng(8);
        const auto x = random_tensor({2, 3, 2, 4}, rng);
        const auto w = random_tensor({3, 1, 1, 1}, rng);
        const auto y = pointwise_group_conv(V::constant(x), V::constant(w), std::optional<V>{}, 3).value();
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < 2; ++i)
                    for (std::size_t j = 0; j < 4; ++j) CHECK(y(b, c, i, j) == doctest::Approx(w[c] * x(b, c, i, j)).epsilon(1e-14));
    }

    TEST_CASE("groups = 2 matches a block-diagonal dense matmul") {
        Rng rng(9);
        const auto x = random_tensor({1, 4, 2, 2}, rng);
        const auto w = random_tensor({4, 2, 1, 1}, rng);
        const auto y = pointwise_group_conv(V::constant(x), V::constant(w), std::optional<V>{}, 2).value();
        double dense[4][4] = {};
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t i = 0; i < 2; ++i) dense[o][(o / 2) * 2 + i] = w(o, i, 0, 0);
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t p = 0; p < 4; ++p) {
                double acc = 0;
                for (std::size_t i = 0; i < 4; ++i) acc += dense[o][i] * x[i * 4 + p];
                CHECK(std::abs(y[o * 4 + p] - acc) <= 1e-12 * std::max(1.0, std::abs(acc)));
            }
    }

    TEST_CASE("indivisible groups are rejected") {
        CHECK_THROWS_AS(pointwise_group_conv(V::constant(Tensor4<double>({1, 5, 2, 2})),
                                             V::constant(Tensor4<double>({4, 2, 1, 1})), std::optional<V>{}, 2),
                        DimensionError);
    }
}

TEST_SUITE("se_block") {
    TEST_CASE("zero weights halve the input") {
        Rng rng(10);
        auto p = SEParams<double>::init(rng, 4, 2);
        zero(p.w1);
        zero(p.w2);
        const auto x = random_tensor({1, 4, 3, 3}, rng);
        const auto y = se_block(V::constant(x), p).value();
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == 0.5 * x[i]);
    }

    TEST_CASE("zero input stays zero") {
        Rng rng(11);
        auto p = SEParams<double>::init(rng, 4, 2);
        const auto y = se_block(V::constant(Tensor4<double>({2, 4, 3, 3})), p).value();
        for (double v : y.values()) CHECK(v == 0.0);
    }

    TEST_CASE("reduced width is max(1, floor(C / r))") {
        CHECK(SEParams<double>::reduced_channels(48, 16) == 3);
        CHECK(SEParams<double>::reduced_channels(8, 16) == 1);
    }

    TEST_CASE("matches the literal scalar reference") {
        Rng rng(12);
        auto p = SEParams<double>::init(rng, 4, 2);
        const auto x = random_tensor({1, 4, 3, 3}, rng);
        const auto y = se_block(V::constant(x), p).value();
        CHECK(max_rel_diff(y, oracle_se(x, p.w1.value(), p.w2.value())) < 1e-10);
    }

    TEST_CASE("output magnitude strictly shrinks wherever the input is nonzero") {
        Rng rng(13);
        for (int t = 0; t < 20; ++t) {
            auto p = SEParams<double>::init(rng, 6, 3);
            const auto x = random_tensor({2, 6, 3, 2}, rng, -4, 4);
            const auto y = se_block(V::constant(x), p).value();
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] != 0.0) CHECK(std::abs(y[i]) < std::abs(x[i]));
            }
        }
    }

    TEST_CASE("gradient check") {
        Rng rng(14);
        auto p = SEParams<double>::init(rng, 6, 2);
        V x = param(random_tensor({2, 6, 3, 3}, rng));
        const V r = V::constant(random_tensor(x.shape(), rng));
        const auto rep = finite_diff_check([&] { return sum(mul(se_block(x, p), r)); },
                                           {{"x", x}, {"w1", p.w1}, {"w2", p.w2}});
        INFO(rep.worst_param, " ", rep.max_rel_error);
        CHECK(rep.passed);
    }
}

TEST_SUITE("residual_block") {
    BlockParams<double>::Options opts(bool se) {
        BlockParams<double>::Options o;
        o.band_kernel = 5;
        o.se_enabled = se;
        o.se_reduction = 4;
        return o;
    }

    TEST_CASE("zeroed residual branch is the identity map") {
        Rng rng(15);
        auto p = BlockParams<double>::init(rng, 16, opts(true));
        zero(p.expand_weight);
        zero(p.reduce_weight);
        zero(p.mixer.h_weight);
        zero(p.mixer.v_weight);
        zero(p.mixer.sq_weight);
        zero(*p.gamma);
        const auto x = random_tensor({2, 16, 4, 5}, rng);
        CHECK(bit_equal(residual_block(V::constant(x), p, false, rng).value(), x));
        CHECK(bit_equal(residual_block(V::constant(x), p, true, rng).value(), x));
    }

    TEST_CASE("SE with zero weights halves the residual branch exactly") {
        Rng rng(16);
        auto with_se = BlockParams<double>::init(rng, 8, opts(true));
        with_se.gamma->mutable_value().fill(1.0);
        zero(with_se.se->w1);
        zero(with_se.se->w2);
        auto without = with_se;
        without.se.reset();
        const auto x = random_tensor({1, 8, 4, 4}, rng);
        const auto a = residual_block(V::constant(x), with_se, false, rng).value();
        const auto b = residual_block(V::constant(x), without, false, rng).value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK((a[i] - x[i]) == doctest::Approx(0.5 * (b[i] - x[i])).epsilon(1e-12));
        }
    }

    TEST_CASE("layer scale defaults to 1e-6 and SE is off by default") {
        Rng rng(17);
        auto p = BlockParams<double>::init(rng, 8, {});
        REQUIRE(p.gamma.has_value());
        for (double g : p.gamma->value().values()) CHECK(g == 1e-6);
        CHECK_FALSE(p.se.has_value());
        CHECK(p.expand_weight.shape() == Shape4{32, 8, 1, 1});
        CHECK(p.reduce_weight.shape() == Shape4{8, 32, 1, 1});
        CHECK(p.mixer.band_kernel == 11);
    }

    TEST_CASE("width mismatch is a dimension error") {
        Rng rng(18);
        auto p = BlockParams<double>::init(rng, 8, {});
        CHECK_THROWS_AS(residual_block(V::constant(Tensor4<double>({1, 4, 3, 3})), p, false, rng), DimensionError);
    }

    TEST_CASE("gradient check with SE, layer scale, grouped pointwise and drop path") {
        Rng rng(19);
        auto o = opts(true);
        o.pointwise_groups = 2;
        o.drop_path = 0.3;
        auto p = BlockParams<double>::init(rng, 8, o);
        auto ps = params_of(p);
        randomize(ps, rng, -0.8, 0.8);
        p.norm_scale.mutable_value() = random_tensor(p.norm_scale.shape(), rng, 0.5, 1.5);
        V x = param(random_tensor({3, 8, 4, 5}, rng));
        const V r = V::constant(random_tensor(x.shape(), rng));
        auto named = as_named(ps);
        named.push_back({"x", x});
        const auto rep = finite_diff_check(
            [&] {
                Rng drop(7);
                return sum(mul(residual_block(x, p, true, drop), r));
            },
            named);
        INFO(rep.worst_param, "[", rep.worst_index, "] ", rep.worst_analytic, " vs ", rep.worst_numeric);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error < 1e-4);
    }
}
