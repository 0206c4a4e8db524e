#pragma once

#include <filesystem>
#include <stdexcept>

#include "anyir/tensor.hpp"

namespace anyir {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Any PNG (gray, palette, alpha, 16-bit) -> [1,3,H,W] float in [0,1].
Tensor read_png(const std::filesystem::path& path);

// [1,3,H,W] (or [3,H,W]) in [0,1] -> 8-bit RGB PNG; values are clamped and
// rounded to nearest.
void write_png(const std::filesystem::path& path, const Tensor& image);

// Exact 8-bit quantization used by write_png: round(clamp(v, 0, 1) * 255) / 255.
Tensor quantize8(const Tensor& image);

}  // namespace anyir
