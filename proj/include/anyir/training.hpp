#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyir/degradations.hpp"
#include "anyir/network.hpp"
#include "json.hpp"

namespace anyir {

// Non-finite loss, gradient or optimizer state.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int steps = 500;
    int batch = 8;
    std::int64_t crop = 32;
    double lr0 = 2e-4;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double fourier_weight = 0.1;
    int eval_interval = 100;  // 0 disables intermediate evals; the final one always runs
    std::uint64_t seed = 0;

    // Throws ConfigError. lr_min may be 0 only together with lr0 = 0.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Mean |pred - target| over all elements.
template <class T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);

// Mean |Re| + |Im| difference between rfft2(pred) and rfft2(target), averaged
// over the 2 * N*C*H*(W/2+1) real and imaginary entries.
template <class T>
Var<T> fourier_loss(const Var<T>& pred, const Var<T>& target);

// lr_min + (lr0 - lr_min)(1 + cos(pi t / T)) / 2; t > T gives lr_min.
double cosine_lr(std::int64_t t, std::int64_t total, double lr0, double lr_min);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Tensor> m;  // one per parameter, allocated on the first step
    std::vector<Tensor> v;
};

// Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps). The whole step
// is rejected (nothing changes) if any gradient holds NaN or Inf; the error
// names the parameter. Parameters with requires_grad = false are skipped.
void adam_step(const std::vector<NamedParam<float>>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr);

struct AugmentDraw {
    std::int64_t top = 0;
    std::int64_t left = 0;
    bool hflip = false;
    bool vflip = false;
};

// Draws a crop offset and the two flips.
AugmentDraw draw_augment(std::int64_t height, std::int64_t width, std::int64_t crop, Rng& rng);
// Crops then flips; throws ShapeError when the crop exceeds the image.
Tensor apply_augment(const Tensor& image, std::int64_t crop, const AugmentDraw& d);
// Same crop and flips for both images of the pair.
ImagePair augment(const ImagePair& pair, std::int64_t crop, Rng& rng);

struct EvalResult {
    double psnr = 0;           // restored vs clean, mean over pairs
    double ssim = 0;
    double baseline_psnr = 0;  // degraded vs clean
    double baseline_ssim = 0;
};

EvalResult evaluate(const ModelF& model, const PairSet& set);

struct TrainResult {
    std::vector<nlohmann::json> log;  // the records written to metrics.jsonl
    EvalResult final_eval;
    std::int64_t steps_done = 0;
};

struct TrainOutputs {
    std::filesystem::path dir;  // metrics.jsonl and checkpoint.bin; empty keeps everything in memory
    std::function<void(const nlohmann::json&)> on_record;
};

// Batches are drawn with replacement from `train_set` and augmented; the loss
// is l1 + fourier_weight * fourier. A checkpoint is written at every eval and
// at the end. A non-finite loss throws NumericError and leaves the last good
// checkpoint on disk untouched.
TrainResult train(ModelF& model, const PairSet& train_set, const PairSet& val_set, const TrainConfig& cfg,
                  const TrainOutputs& out = {});

}  // namespace anyir
