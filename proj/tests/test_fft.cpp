#include "doctest.h"

#include <cmath>
#include <complex>

#include "anyir/fft.hpp"
#include "anyir/ops.hpp"
#include "anyir/rng.hpp"
#include "oracles.hpp"

using namespace anyir;

namespace {

TensorD random_tensor(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    TensorD t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
    return t;
}

std::complex<double> bin(const TensorD& spec, std::int64_t n, std::int64_t c, std::int64_t k, std::int64_t l) {
    return {spec.at(n, c, k, 2 * l), spec.at(n, c, k, 2 * l + 1)};
}

}  // namespace

TEST_CASE("1-d transform matches a naive DFT for power-of-two and other lengths") {
    const long double two_pi = 2.0L * 3.14159265358979323846264338327950288L;
    for (int n : {1, 2, 3, 5, 8, 12, 17, 32}) {
        Rng rng(static_cast<std::uint64_t>(n));
        std::vector<std::complex<double>> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto y = x;
        fft::transform(y, false);
        double worst = 0;
        for (int k = 0; k < n; ++k) {
            std::complex<long double> acc = 0;
            for (int j = 0; j < n; ++j) {
                const long double a = -two_pi * k * j / n;
                acc += std::complex<long double>(x[j].real(), x[j].imag()) * std::complex<long double>(std::cos(a), std::sin(a));
            }
            worst = std::max(worst, static_cast<double>(std::abs(acc - std::complex<long double>(y[k].real(), y[k].imag()))));
        }
        CHECK(worst <= 1e-10 * n);
        fft::transform(y, true);
        for (int k = 0; k < n; ++k) CHECK(std::abs(y[k] / static_cast<double>(n) - x[k]) <= 1e-12);
    }
}

TEST_CASE("round trip is the identity within 1e-5") {
    for (const Shape& s : {Shape{1, 2, 8, 8}, Shape{2, 1, 4, 16}, Shape{1, 3, 6, 10}, Shape{1, 1, 7, 9}, Shape{1, 1, 1, 1}}) {
        const TensorD x = random_tensor(s, 1);
        CHECK(max_abs_diff(fft::irfft2(fft::rfft2(x), s[2], s[3]), x) <= 1e-5);
        const Tensor xf = x.cast<float>();
        CHECK(max_abs_diff(fft::irfft2(fft::rfft2(xf), s[2], s[3]), xf) <= 1e-5);
    }
}

TEST_CASE("constant input has only a DC term") {
    const TensorD x = TensorD::full({1, 1, 4, 6}, 0.75);
    const TensorD s = fft::rfft2(x);
    REQUIRE(s.shape() == Shape{1, 1, 4, 2 * 4});
    for (std::int64_t k = 0; k < 4; ++k)
        for (std::int64_t l = 0; l < 4; ++l) {
            const auto v = bin(s, 0, 0, k, l);
            if (k == 0 && l == 0) {
                CHECK(v.real() == doctest::Approx(0.75 * 24).epsilon(1e-14));
                CHECK(std::abs(v.imag()) <= 1e-14);
            } else {
                CHECK(std::abs(v) <= 1e-13);
            }
        }
}

TEST_CASE("packed spectrum equals the naive DFT on its stored half") {
    for (const Shape& s : {Shape{2, 2, 4, 4}, Shape{1, 1, 5, 6}, Shape{1, 2, 8, 7}}) {
        const TensorD x = random_tensor(s, 2);
        const TensorD spec = fft::rfft2(x);
        const std::int64_t h = s[2], w = s[3];
        for (std::int64_t n = 0; n < s[0]; ++n)
            for (std::int64_t c = 0; c < s[1]; ++c) {
                std::vector<oracle::Real> plane(static_cast<std::size_t>(h * w));
                for (std::int64_t i = 0; i < h * w; ++i) plane[static_cast<std::size_t>(i)] = x[((n * s[1]) + c) * h * w + i];
                const auto full = oracle::dft2(plane, h, w);
                for (std::int64_t k = 0; k < h; ++k)
                    for (std::int64_t l = 0; l < fft::half_width(w); ++l) {
                        const auto want = full[static_cast<std::size_t>(k * w + l)];
                        const auto got = bin(spec, n, c, k, l);
                        CHECK(std::abs(got.real() - static_cast<double>(want.real())) <= 1e-10);
                        CHECK(std::abs(got.imag() - static_cast<double>(want.imag())) <= 1e-10);
                    }
            }
    }
}

TEST_CASE("parseval against the naive DFT on 4, 8 and 16 squared") {
    for (std::int64_t n : {4, 8, 16}) {
        const TensorD x = random_tensor({1, 1, n, n}, static_cast<std::uint64_t>(n));
        std::vector<oracle::Real> plane(x.data().begin(), x.data().end());
        const auto full = oracle::dft2(plane, n, n);
        long double energy = 0, spectral = 0;
        for (auto v : plane) energy += v * v;
        for (const auto& v : full) spectral += std::norm(v);
        spectral /= static_cast<long double>(n * n);
        CHECK(std::abs(static_cast<double>(spectral / energy) - 1.0) <= 1e-4);

        // The same identity from the packed half spectrum, weighting mirrored columns twice.
        const TensorD s = fft::rfft2(x);
        double half = 0;
        for (std::int64_t k = 0; k < n; ++k)
            for (std::int64_t l = 0; l < fft::half_width(n); ++l) half += fft::column_weight(l, n) * std::norm(bin(s, 0, 0, k, l));
        half /= static_cast<double>(n * n);
        CHECK(std::abs(half / static_cast<double>(energy) - 1.0) <= 1e-4);
    }
}

TEST_CASE("both transforms are linear") {
    const TensorD x = random_tensor({1, 2, 6, 8}, 3), y = random_tensor({1, 2, 6, 8}, 4);
    const double a = 1.7, b = -0.6;
    TensorD mix = x;
    for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    const TensorD fx = fft::rfft2(x), fy = fft::rfft2(y), fm = fft::rfft2(mix);
    double worst = 0;
    for (std::int64_t i = 0; i < fm.numel(); ++i) worst = std::max(worst, std::abs(fm[i] - (a * fx[i] + b * fy[i])));
    CHECK(worst <= 1e-5);

    const TensorD sx = random_tensor(fx.shape(), 5), sy = random_tensor(fx.shape(), 6);
    TensorD smix = sx;
    for (std::int64_t i = 0; i < smix.numel(); ++i) smix[i] = a * sx[i] + b * sy[i];
    const TensorD ix = fft::irfft2(sx, 6, 8), iy = fft::irfft2(sy, 6, 8), im = fft::irfft2(smix, 6, 8);
    worst = 0;
    for (std::int64_t i = 0; i < im.numel(); ++i) worst = std::max(worst, std::abs(im[i] - (a * ix[i] + b * iy[i])));
    CHECK(worst <= 1e-5);
}

TEST_CASE("inverse follows the weighted half-spectrum sum for arbitrary packed input") {
    const long double two_pi = 2.0L * 3.14159265358979323846264338327950288L;
    for (std::int64_t w : {6, 7}) {
        const std::int64_t h = 5, hw = fft::half_width(w);
        const TensorD s = random_tensor({1, 1, h, 2 * hw}, static_cast<std::uint64_t>(w));
        const TensorD x = fft::irfft2(s, h, w);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) {
                long double acc = 0;
                for (std::int64_t k = 0; k < h; ++k)
                    for (std::int64_t l = 0; l < hw; ++l) {
                        const long double th = two_pi * (static_cast<long double>(k * y) / h + static_cast<long double>(l * xx) / w);
                        const long double re = s.at(0, 0, k, 2 * l), im = s.at(0, 0, k, 2 * l + 1);
                        acc += fft::column_weight(l, w) * (re * std::cos(th) - im * std::sin(th));
                    }
                CHECK(std::abs(x.at(0, 0, y, xx) - static_cast<double>(acc / (h * w))) <= 1e-12);
            }
    }
}

TEST_CASE("spectrum shape checks") {
    CHECK_THROWS_AS(fft::rfft2(TensorD({4, 4})), ShapeError);
    CHECK_THROWS_AS(fft::irfft2(TensorD({1, 1, 4, 5}), 4, 8), ShapeError);
    CHECK_THROWS_AS(fft::irfft2(TensorD({1, 1, 4, 10}), 3, 8), ShapeError);
}
