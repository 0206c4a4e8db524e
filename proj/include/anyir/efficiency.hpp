#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyir/network.hpp"
#include "anyir/tensor.hpp"
#include "json.hpp"

namespace anyir {

// ---- analytic cost -------------------------------------------------------------
//
// Conventions: a conv costs Cout * (Cin/groups) * kh * kw * H' * W' MACs;
// channel attention adds 2 * (C/heads)^2 * HW MACs per head (scores and
// apply); a 2-D real FFT counts 2.5 * HW * log2(HW) MACs per channel.
// Elementwise work (norms, activations, gates, additions) is not counted.

struct ModuleCost {
    std::string name;  // patch_embed, encoder0, down0, ..., refine, output
    double conv_macs = 0;
    double attention_macs = 0;
    double fft_macs = 0;
    std::int64_t params = 0;

    double macs() const { return conv_macs + attention_macs + fft_macs; }
};

struct CostReport {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<ModuleCost> modules;

    double conv_macs() const;
    double attention_macs() const;
    double fft_macs() const;
    double total_macs() const;
    double total_flops() const { return 2.0 * total_macs(); }
    std::int64_t params() const;

    nlohmann::json to_json() const;
    std::string to_table() const;
};

// Throws ShapeError unless H and W are positive multiples of 8.
CostReport count_flops(const ModelConfig& cfg, std::int64_t height, std::int64_t width);

// ---- image quality --------------------------------------------------------------

// 10 * log10(range^2 / MSE) over all elements; +infinity when MSE is 0.
template <class T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, double data_range);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Single-scale SSIM on [N,C,H,W] with an 11x11 Gaussian window (sigma 1.5)
// over valid positions only, averaged per channel then over channels and
// images. Requires H, W >= 11.
template <class T>
double ssim(const BasicTensor<T>& a, const BasicTensor<T>& b, double data_range);

// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> ssim_window_1d();

}  // namespace anyir
