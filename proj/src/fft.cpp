#include "anyir/fft.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

namespace anyir::fft {

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Forward twiddles e^{-2 pi i k/n}, k < n/2, cached per length.
const std::vector<cd>& twiddles(std::size_t n) {
    static thread_local std::map<std::size_t, std::vector<cd>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<cd> w(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        w[k] = cd(std::cos(a), std::sin(a));
    }
    return cache.emplace(n, std::move(w)).first->second;
}

void radix2(std::span<cd> a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& w = twiddles(n);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                cd tw = w[k * step];
                if (inverse) tw = std::conj(tw);
                const cd u = a[i + k];
                const cd v = a[i + k + half] * tw;
                a[i + k] = u + v;
                a[i + k + half] = u - v;
            }
        }
    }
}

struct BluesteinPlan {
    std::size_t m = 0;
    std::vector<cd> chirp;       // e^{-i pi k^2 / n}
    std::vector<cd> kernel_fft;  // FFT of conj chirp, wrapped to length m
};

const BluesteinPlan& bluestein_plan(std::size_t n) {
    static thread_local std::map<std::size_t, BluesteinPlan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    BluesteinPlan p;
    p.m = next_pow2(2 * n - 1);
    p.chirp.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small and exact.
        const std::size_t k2 = (k * k) % (2 * n);
        const double a = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
        p.chirp[k] = cd(std::cos(a), std::sin(a));
    }
    p.kernel_fft.assign(p.m, cd(0.0, 0.0));
    p.kernel_fft[0] = std::conj(p.chirp[0]);
    for (std::size_t k = 1; k < n; ++k) {
        p.kernel_fft[k] = std::conj(p.chirp[k]);
        p.kernel_fft[p.m - k] = std::conj(p.chirp[k]);
    }
    radix2(p.kernel_fft, false);
    return cache.emplace(n, std::move(p)).first->second;
}

void bluestein(std::span<cd> a, bool inverse) {
    const std::size_t n = a.size();
    const BluesteinPlan& p = bluestein_plan(n);
    // The inverse kernel is the conjugate of the forward one:
    // IDFT(x) = conj(DFT(conj(x))).
    if (inverse) {
        for (auto& v : a) v = std::conj(v);
    }
    std::vector<cd> buf(p.m, cd(0.0, 0.0));
    for (std::size_t k = 0; k < n; ++k) buf[k] = a[k] * p.chirp[k];
    radix2(buf, false);
    for (std::size_t k = 0; k < p.m; ++k) buf[k] *= p.kernel_fft[k];
    radix2(buf, true);
    const double scale = 1.0 / static_cast<double>(p.m);
    for (std::size_t k = 0; k < n; ++k) a[k] = buf[k] * scale * p.chirp[k];
    if (inverse) {
        for (auto& v : a) v = std::conj(v);
    }
}

void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4) {
        throw ShapeError(std::string(what) + ": expected rank-4 [N,C,H,W] input, got " +
                         to_string(s));
    }
}

}  // namespace

void transform(std::span<cd> data, bool inverse) {
    if (data.size() <= 1) return;
    if (is_pow2(data.size())) {
        radix2(data, inverse);
    } else {
        bluestein(data, inverse);
    }
}

template <class T>
BasicTensor<T> rfft2(const BasicTensor<T>& x) {
    require_rank4(x.shape(), "rfft2");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t wf = half_width(w);
    BasicTensor<T> out({n, c, h, 2 * wf});
    std::vector<cd> row(static_cast<std::size_t>(w));
    std::vector<cd> col(static_cast<std::size_t>(h));
    std::vector<cd> plane(static_cast<std::size_t>(h * wf));
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = x.raw() + nc * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t i = 0; i < w; ++i) row[i] = cd(static_cast<double>(src[y * w + i]), 0.0);
            transform(row, false);
            for (std::int64_t l = 0; l < wf; ++l) plane[y * wf + l] = row[l];
        }
        for (std::int64_t l = 0; l < wf; ++l) {
            for (std::int64_t y = 0; y < h; ++y) col[y] = plane[y * wf + l];
            transform(col, false);
            for (std::int64_t y = 0; y < h; ++y) plane[y * wf + l] = col[y];
        }
        T* dst = out.raw() + nc * h * 2 * wf;
        for (std::int64_t i = 0; i < h * wf; ++i) {
            dst[2 * i] = static_cast<T>(plane[i].real());
            dst[2 * i + 1] = static_cast<T>(plane[i].imag());
        }
    }
    return out;
}

template <class T>
BasicTensor<T> irfft2(const BasicTensor<T>& spectrum, std::int64_t height, std::int64_t width) {
    require_rank4(spectrum.shape(), "irfft2");
    if (height < 1 || width < 1) {
        throw ShapeError("irfft2: unsupported output size " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    const std::int64_t n = spectrum.dim(0), c = spectrum.dim(1);
    const std::int64_t h = height, w = width, wf = half_width(w);
    if (spectrum.dim(2) != h || spectrum.dim(3) != 2 * wf) {
        throw ShapeError("irfft2: spectrum shape " + to_string(spectrum.shape()) +
                         " does not match output " + std::to_string(h) + "x" + std::to_string(w) +
                         " (expected H=" + std::to_string(h) + ", packed width " +
                         std::to_string(2 * wf) + ")");
    }
    BasicTensor<T> out({n, c, h, w});
    std::vector<cd> plane(static_cast<std::size_t>(h * wf));
    std::vector<cd> col(static_cast<std::size_t>(h));
    std::vector<cd> row(static_cast<std::size_t>(w));
    const double scale = 1.0 / static_cast<double>(h * w);
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = spectrum.raw() + nc * h * 2 * wf;
        for (std::int64_t i = 0; i < h * wf; ++i) {
            plane[i] = cd(static_cast<double>(src[2 * i]), static_cast<double>(src[2 * i + 1]));
        }
        for (std::int64_t l = 0; l < wf; ++l) {
            for (std::int64_t y = 0; y < h; ++y) col[y] = plane[y * wf + l];
            transform(col, true);
            for (std::int64_t y = 0; y < h; ++y) plane[y * wf + l] = col[y];
        }
        T* dst = out.raw() + nc * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            // Hermitian extension of the row; DC and Nyquist keep only their
            // real part, which realizes c_l = 1 for those columns.
            for (std::int64_t l = 0; l < w; ++l) row[l] = cd(0.0, 0.0);
            for (std::int64_t l = 0; l < wf; ++l) {
                const cd v = plane[y * wf + l];
                if (column_weight(l, w) == 1.0) {
                    row[l] = cd(v.real(), 0.0);
                } else {
                    row[l] = v;
                    row[w - l] = std::conj(v);
                }
            }
            transform(row, true);
            for (std::int64_t i = 0; i < w; ++i) dst[y * w + i] = static_cast<T>(row[i].real() * scale);
        }
    }
    return out;
}

template Tensor rfft2(const Tensor&);
template TensorD rfft2(const TensorD&);
template Tensor irfft2(const Tensor&, std::int64_t, std::int64_t);
template TensorD irfft2(const TensorD&, std::int64_t, std::int64_t);

}  // namespace anyir::fft
