#pragma once

#include <complex>
#include <cstdint>
#include <span>

#include "anyir/tensor.hpp"

namespace anyir::fft {

// In-place complex DFT of any length >= 1. Power-of-two lengths use iterative
// radix-2; other lengths go through Bluestein's chirp-z on a padded radix-2
// transform. Forward uses exp(-2 pi i kn/N); inverse uses the conjugate kernel
// and is NOT normalized.
void transform(std::span<std::complex<double>> data, bool inverse);

// Number of stored columns of a real 2-D spectrum: W/2 + 1.
inline std::int64_t half_width(std::int64_t w) { return w / 2 + 1; }

// Real 2-D transforms over the last two axes of a rank-4 tensor.
//
// The spectrum of x[N,C,H,W] is packed as a real tensor [N,C,H,2*(W/2+1)]
// whose last axis interleaves (re, im). The forward transform is unnormalized;
// the inverse carries the 1/(H*W) factor so that irfft2(rfft2(x)) = x.
//
// irfft2 is defined for any packed input (Hermitian or not) as
//   x[h,w] = 1/(HW) * sum_k sum_{l<W/2+1} c_l * Re(S[k,l] e^{+i theta})
// with c_l = 1 for the DC column and, for even W, the Nyquist column, else 2.
// This matches the usual c2r convention and makes the map linear and exactly
// adjoint-able.
template <class T>
BasicTensor<T> rfft2(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> irfft2(const BasicTensor<T>& spectrum, std::int64_t height, std::int64_t width);

// Column weight c_l used by irfft2 and by Parseval's identity on a half
// spectrum.
inline double column_weight(std::int64_t l, std::int64_t width) {
    if (l == 0) return 1.0;
    if (width % 2 == 0 && l == width / 2) return 1.0;
    return 2.0;
}

}  // namespace anyir::fft
