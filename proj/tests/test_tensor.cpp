#include "doctest.h"

#include <cmath>

#include "anyir/ops.hpp"
#include "anyir/rng.hpp"
#include "oracles.hpp"

using namespace anyir;

namespace {

template <class T = double>
BasicTensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    BasicTensor<T> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

// Standard normal CDF from its Taylor series, independent of std::erf.
long double phi_series(long double x) {
    long double term = x, sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / (2.0L * n);
        sum += term / (2.0L * n + 1.0L);
    }
    return 0.5L + sum / std::sqrt(2.0L * 3.14159265358979323846264338327950288L);
}

}  // namespace

TEST_CASE("tensor construction and shape checks") {
    const Tensor t({2, 3, 4, 5}, 1.5f);
    CHECK(t.numel() == 120);
    CHECK(t.dim(1) == 3);
    CHECK(t.at(1, 2, 3, 4) == 1.5f);
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
    CHECK_THROWS_AS(t.reshaped({7, 7}), ShapeError);
    CHECK(t.reshaped({6, 20}).dim(0) == 6);
}

TEST_CASE("rng stream matches the reference xoshiro256** sequence") {
    // Seed 0 expands through splitmix64 to the published state
    // e220a8397b1dcdaf 6e789e6aa1b965f4 06c45d188009454f f88bb8a8724c81ec.
    Rng r(0);
    CHECK(r.state()[0] == 0xe220a8397b1dcdafULL);
    CHECK(r.state()[3] == 0xf88bb8a8724c81ecULL);
    CHECK(r.next_u64() == 0x99ec5f36cb75f2b4ULL);
    CHECK(r.next_u64() == 0xbf6e1f784956452aULL);
    CHECK(r.next_u64() == 0x1a5f849d4933e6e0ULL);

    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    const Rng base(7);
    CHECK(base.stream("init").next_u64() == base.stream("init").next_u64());
    CHECK(base.stream("init").next_u64() != base.stream("augment").next_u64());
    CHECK(base.stream("degrade", 0).next_u64() != base.stream("degrade", 1).next_u64());
    Rng u(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK((v >= 0.0 && v < 1.0));
        CHECK(u.below(7) < 7);
    }
}

TEST_CASE("conv2d identity, averaging and direct-loop oracle") {
    const TensorD x = random_tensor({2, 3, 5, 5}, 1);
    TensorD eye({3, 3, 1, 1});
    for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1.0;
    CHECK(bitwise_equal(conv2d(VarD::leaf(x), VarD::leaf(eye)).value(), x));

    const TensorD flat = TensorD::full({1, 2, 6, 6}, 0.7);
    const TensorD box = TensorD::full({2, 1, 3, 3}, 1.0 / 9.0);
    const TensorD avg = conv2d(VarD::leaf(flat), VarD::leaf(box), {1, 1, 2}).value();
    for (int c = 0; c < 2; ++c)
        for (int y = 1; y < 5; ++y)
            for (int xx = 1; xx < 5; ++xx) CHECK(avg.at(0, c, y, xx) == doctest::Approx(0.7).epsilon(1e-12));

    const TensorD w = random_tensor({4, 3, 3, 3}, 2);
    const TensorD bias = random_tensor({4}, 3);
    const std::vector<oracle::Real> b(bias.data().begin(), bias.data().end());
    for (const Conv2dOptions opts : {Conv2dOptions{1, 0, 1}, Conv2dOptions{1, 1, 1}, Conv2dOptions{2, 1, 1}}) {
        const TensorD got = conv2d(VarD::leaf(x), VarD::leaf(w), std::optional<VarD>(VarD::leaf(bias)), opts).value();
        const auto want = oracle::conv(oracle::Array4::from(x), oracle::Array4::from(w), b, opts.stride, opts.padding, 1);
        REQUIRE(got.shape() == Shape{2, 4, want.h, want.w});
        CHECK(oracle::rel_error(got, want) <= 1e-5);
    }
    const TensorD wg = random_tensor({6, 1, 3, 3}, 4);
    const TensorD xg = random_tensor({1, 6, 4, 5}, 5);
    CHECK(oracle::rel_error(conv2d(VarD::leaf(xg), VarD::leaf(wg), {1, 1, 6}).value(),
                            oracle::conv(oracle::Array4::from(xg), oracle::Array4::from(wg), 1, 6)) <= 1e-5);

    CHECK_THROWS_AS(conv2d(VarD::leaf(x), VarD::leaf(random_tensor({4, 2, 3, 3}, 6))), ShapeError);
    CHECK_THROWS_AS(conv2d(VarD::leaf(x), VarD::leaf(w), {1, 1, 2}), ShapeError);
}

TEST_CASE("gelu and sigmoid against independent evaluations") {
    TensorD pts({5});
    const double xs[5] = {0.0, 10.0, 1.0, 2.0, -1.5};
    for (int i = 0; i < 5; ++i) pts[i] = xs[i];
    const TensorD g = gelu(VarD::leaf(pts)).value();
    CHECK(g[0] == 0.0);
    CHECK(std::abs(g[1] - 10.0) <= 1e-6);
    CHECK(std::abs(g[2] - static_cast<double>(phi_series(1.0L))) <= 1e-12);
    CHECK(std::abs(g[4] - static_cast<double>(-1.5L * phi_series(-1.5L))) <= 1e-12);

    const TensorD s = sigmoid(VarD::leaf(pts)).value();
    CHECK(s[0] == 0.5);
    CHECK(std::abs(s[3] - static_cast<double>(1.0L / (1.0L + std::exp(-2.0L)))) <= 1e-15);
    const TensorD r = random_tensor({3, 7}, 9, -6, 6);
    const TensorD sp = sigmoid(VarD::leaf(r)).value();
    const TensorD sn = sigmoid(mul_scalar(VarD::leaf(r), -1.0)).value();
    for (std::int64_t i = 0; i < r.numel(); ++i) {
        CHECK(std::abs(sp[i] + sn[i] - 1.0) <= 1e-15);
        CHECK((sp[i] > 0.0 && sp[i] < 1.0));
    }
}

TEST_CASE("softmax rows, shift invariance and oracle") {
    const TensorD u = TensorD::full({2, 5}, 0.3);
    const TensorD su = softmax(VarD::leaf(u), 1).value();
    for (double v : su.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

    const TensorD x = random_tensor({2, 3, 4, 6}, 10, -4, 4);
    for (int axis = 0; axis < 4; ++axis) {
        const TensorD y = softmax(VarD::leaf(x), axis).value();
        const TensorD ys = softmax(add_scalar(VarD::leaf(x), 50.0), axis).value();
        CHECK(max_abs_diff(y, ys) <= 1e-6);
        if (axis == 3) {
            for (std::int64_t row = 0; row < x.numel() / 6; ++row) {
                double sum = 0;
                for (int k = 0; k < 6; ++k) sum += y[row * 6 + k];
                CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
        }
    }
    TensorD three({1, 3});
    three[0] = 0;
    three[1] = 1;
    three[2] = 2;
    const TensorD p = softmax(VarD::leaf(three), 1).value();
    const long double z = 1.0L + std::exp(1.0L) + std::exp(2.0L);
    CHECK(std::abs(p[0] - static_cast<double>(1.0L / z)) <= 1e-15);
    CHECK(std::abs(p[2] - static_cast<double>(std::exp(2.0L) / z)) <= 1e-15);
}

TEST_CASE("layer norm definitional properties and oracle") {
    const TensorD gain = random_tensor({4}, 11, 0.5, 2.0);
    TensorD flat({1, 4, 2, 2});
    for (std::int64_t y = 0; y < 2; ++y)
        for (std::int64_t x = 0; x < 2; ++x)
            for (int c = 0; c < 4; ++c) flat.at(0, c, y, x) = 0.25 * static_cast<double>(y + x);
    const TensorD normed = layer_norm(VarD::leaf(flat), VarD::leaf(gain)).value();
    for (double v : normed.data()) CHECK(v == 0.0);

    const TensorD x = random_tensor({2, 5, 3, 3}, 12, -3, 3);
    const TensorD y = layer_norm(VarD::leaf(x), VarD::leaf(TensorD::full({5}, 1.0))).value();
    for (int n = 0; n < 2; ++n)
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double mean = 0, var = 0;
                for (int k = 0; k < 5; ++k) mean += y.at(n, k, r, c);
                mean /= 5;
                for (int k = 0; k < 5; ++k) var += (y.at(n, k, r, c) - mean) * (y.at(n, k, r, c) - mean);
                CHECK(std::abs(mean) <= 1e-6);
                CHECK(std::abs(var / 5 - 1.0) <= 1e-4);
            }

    const TensorD small = random_tensor({1, 4, 2, 2}, 13);
    const std::vector<oracle::Real> g(gain.data().begin(), gain.data().end());
    CHECK(oracle::rel_error(layer_norm(VarD::leaf(small), VarD::leaf(gain)).value(),
                            oracle::layer_norm(oracle::Array4::from(small), g, 1e-6L)) <= 1e-6);
}

TEST_CASE("channel statistics") {
    const double delta = kChannelStatsDelta;
    const auto c = channel_stats(VarD::leaf(TensorD::full({1, 2, 3, 3}, 0.4)));
    CHECK(c.mean.value()[1] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(c.std.value()[0] == doctest::Approx(std::sqrt(delta)).epsilon(1e-12));
    const TensorD one = random_tensor({2, 3, 1, 1}, 14);
    const auto s1 = channel_stats(VarD::leaf(one));
    for (std::int64_t i = 0; i < 6; ++i) {
        CHECK(s1.mean.value()[i] == one[i]);
        CHECK(s1.std.value()[i] == doctest::Approx(std::sqrt(delta)).epsilon(1e-12));
    }

    const TensorD x = random_tensor({2, 3, 4, 4}, 15);
    const auto st = channel_stats(VarD::leaf(x));
    REQUIRE(st.mean.shape() == Shape{2, 3});
    for (std::int64_t p = 0; p < 6; ++p) {
        long double mean = 0, var = 0;
        for (int i = 0; i < 16; ++i) mean += x[p * 16 + i];
        mean /= 16;
        for (int i = 0; i < 16; ++i) var += (x[p * 16 + i] - mean) * (x[p * 16 + i] - mean);
        var /= 16;
        CHECK(std::abs(st.mean.value()[p] - static_cast<double>(mean)) <= 1e-6);
        CHECK(std::abs(st.std.value()[p] - static_cast<double>(std::sqrt(var + delta))) <= 1e-6);
    }
}

TEST_CASE("pixel shuffle layout, inverse and index-map oracle") {
    Tensor abcd({1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) abcd[i] = static_cast<float>(i + 1);
    const Tensor un = pixel_unshuffle(VarF::leaf(abcd)).value();
    REQUIRE(un.shape() == Shape{1, 4, 1, 1});
    for (int i = 0; i < 4; ++i) CHECK(un[i] == static_cast<float>(i + 1));

    const Tensor x = random_tensor<float>({2, 3, 4, 4}, 16);
    const Tensor u = pixel_unshuffle(VarF::leaf(x)).value();
    // out[n, 4c + 2i + j, y, x] = in[n, c, 2y + i, 2x + j]
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    for (int y = 0; y < 2; ++y)
                        for (int xx = 0; xx < 2; ++xx)
                            CHECK(u.at(n, 4 * c + 2 * i + j, y, xx) == x.at(n, c, 2 * y + i, 2 * xx + j));
    CHECK(bitwise_equal(pixel_shuffle(VarF::leaf(u)).value(), x));
    CHECK(bitwise_equal(pixel_unshuffle(pixel_shuffle(VarF::leaf(u))).value(), u));
    CHECK_THROWS_AS(pixel_unshuffle(VarF::leaf(Tensor({1, 1, 3, 4}))), ShapeError);
    CHECK_THROWS_AS(pixel_shuffle(VarF::leaf(Tensor({1, 3, 2, 2}))), ShapeError);
}

TEST_CASE("tape replays in reverse order and gradients have the right shapes") {
    const VarD x = VarD::leaf(random_tensor({1, 2, 3, 3}, 17), true);
    const VarD unused = VarD::leaf(random_tensor({1, 2, 3, 3}, 18), true);
    GradTape<double> tape;
    VarD loss;
    {
        auto rec = tape.record();
        loss = sum_all(mul_scalar(gelu(x), 2.0));
        const VarD ignored = add(unused, unused);  // recorded but not part of the loss
        (void)ignored;
    }
    CHECK(tape.op_names() == std::vector<std::string>{"gelu", "mul_scalar", "sum_all", "add"});
    std::vector<std::string> order;
    tape.backward(loss, &order);
    CHECK(order == std::vector<std::string>{"sum_all", "mul_scalar", "gelu"});
    CHECK(x.grad().shape() == x.shape());
    for (double g : unused.grad().data()) CHECK(g == 0.0);
}

TEST_CASE("closed-form gradients") {
    const VarD zero = VarD::leaf(TensorD::zeros({1}), true);
    GradTape<double> t1;
    VarD l1;
    {
        auto rec = t1.record();
        l1 = sum_all(gelu(zero));
    }
    t1.backward(l1);
    CHECK(zero.grad()[0] == doctest::Approx(0.5).epsilon(1e-15));

    const VarD x = VarD::leaf(random_tensor({2, 3, 2, 2}, 19), true);
    GradTape<double> t2;
    VarD l2;
    {
        auto rec = t2.record();
        l2 = sum_all(x);
    }
    t2.backward(l2);
    for (double g : x.grad().data()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects a missing adjoint and non-scalar losses") {
    const VarD x = VarD::leaf(TensorD::full({2}, 1.0), true);
    GradTape<double> tape;
    VarD loss;
    {
        auto rec = tape.record();
        loss = sum_all(VarD::from_op(x.value(), "opaque", {x}, {}));
    }
    try {
        tape.backward(loss);
        FAIL("expected an error");
    } catch (const std::logic_error& e) {
        CHECK(std::string(e.what()).find("opaque") != std::string::npos);
    }
    GradTape<double> t2;
    CHECK_THROWS_AS(t2.backward(x), ShapeError);
}

TEST_CASE("ops are deterministic and finite on in-range inputs") {
    const Tensor x = random_tensor<float>({1, 4, 8, 8}, 20);
    const Tensor w = random_tensor<float>({4, 1, 3, 3}, 21);
    auto f = [&] {
        const VarF v = VarF::leaf(x);
        return layer_norm(gelu(conv2d(v, VarF::leaf(w), {1, 1, 4})), VarF::leaf(Tensor::full({4}, 1.0f))).value();
    };
    const Tensor a = f(), b = f();
    CHECK(bitwise_equal(a, b));
    CHECK(a.all_finite());
}
