#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "anyir/autograd.hpp"

// Differentiable operations on Var<T>. All functions validate shapes and throw
// ShapeError naming the offending dimension. Every op registers an adjoint,
// so anything built from these functions can be passed to GradTape::backward.
namespace anyir {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kChannelStatsDelta = 1e-5;
inline constexpr double kL2NormEps = 1e-12;

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

// ---- elementwise ---------------------------------------------------------
template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> add_scalar(const Var<T>& x, double c);
template <class T> Var<T> mul_scalar(const Var<T>& x, double c);
template <class T> Var<T> abs(const Var<T>& x);
// Exact erf form: x * Phi(x).
template <class T> Var<T> gelu(const Var<T>& x);
template <class T> Var<T> sigmoid(const Var<T>& x);

// x * s where s holds a single value.
template <class T> Var<T> scale(const Var<T>& x, const Var<T>& s);
// x * s broadcast along `axis`; s is rank-1 with extent x.dim(axis).
template <class T> Var<T> scale_axis(const Var<T>& x, const Var<T>& s, int axis);

// ---- reductions ----------------------------------------------------------
template <class T> Var<T> sum_all(const Var<T>& x);
template <class T> Var<T> mean_all(const Var<T>& x);
// Mean over one axis; the axis is removed (a rank-1 input gives shape [1]).
template <class T> Var<T> mean_axis(const Var<T>& x, int axis);

// ---- shape ---------------------------------------------------------------
template <class T> Var<T> reshape(const Var<T>& x, Shape shape);
template <class T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <class T> Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count);
// Channels start, start+step, ... (count of them).
template <class T>
Var<T> gather_channels(const Var<T>& x, std::int64_t start, std::int64_t step, std::int64_t count);
// out[2k] = a[k], out[2k+1] = b[k] along channels.
template <class T> Var<T> interleave_channels(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> pixel_unshuffle(const Var<T>& x, int factor = 2);
template <class T> Var<T> pixel_shuffle(const Var<T>& x, int factor = 2);

// ---- neural --------------------------------------------------------------
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const std::optional<Var<T>>& bias,
              Conv2dOptions opts = {});
template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, Conv2dOptions opts = {}) {
    return conv2d(input, weight, std::optional<Var<T>>{}, opts);
}

// Bias-free layer norm over the channel axis at every (n, h, w) location.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, double eps = kLayerNormEps);

// Per-(n, c) spatial mean and sqrt(spatial variance + delta). Shapes [N, C].
template <class T> Var<T> spatial_mean(const Var<T>& x);
template <class T> Var<T> spatial_std(const Var<T>& x, double delta = kChannelStatsDelta);

template <class T>
struct ChannelStats {
    Var<T> mean;
    Var<T> std;
};
template <class T>
ChannelStats<T> channel_stats(const Var<T>& x, double delta = kChannelStatsDelta) {
    return {spatial_mean(x), spatial_std(x, delta)};
}

// Max-subtracted softmax along `axis`.
template <class T> Var<T> softmax(const Var<T>& x, int axis);
// x / max(||x||_2, eps) along `axis`.
template <class T> Var<T> l2_normalize(const Var<T>& x, int axis, double eps = kL2NormEps);

// Batched products over matching leading axes of rank-4 inputs:
// matmul:    [B0,B1,M,K] x [B0,B1,K,P] -> [B0,B1,M,P]
// matmul_nt: [B0,B1,M,K] x [B0,B1,P,K] -> [B0,B1,M,P]   (a * b^T)
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

// ---- frequency -----------------------------------------------------------
// Packed spectrum [N,C,H,2*(W/2+1)]; see fft.hpp for conventions.
template <class T> Var<T> rfft2(const Var<T>& x);
template <class T> Var<T> irfft2(const Var<T>& spectrum, std::int64_t height, std::int64_t width);

}  // namespace anyir
