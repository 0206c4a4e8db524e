#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "anyir/autograd.hpp"
#include "anyir/rng.hpp"

// Building blocks of the degradation adaptation block (DAB):
//
//   x_hat          = layer_norm(F_in)
//   (a, g)         = skip_split(x_hat)           odd / even channels
//   att            = channel_attention(a)
//   gate           = gated_da(g)
//   fused          = W_fuse * (lambda * spatial + (1 - lambda) * frequency) + F_in
//   F_out          = ffn(fused)                   includes its own residual
//
// Parameters are plain structs of Var<T> leaves; all convolutions inside a
// block are bias-free.
namespace anyir {

template <class T>
using ParamVisitor = std::function<void(const std::string& name, Var<T>& param)>;

// Fractions of the GatedDA hidden width given to the (alpha, beta, gamma)
// parts. The expanded feature is split in the order gamma, beta, alpha.
struct SplitRatio {
    double alpha = 0.25;
    double beta = 0.25;
    double gamma = 0.5;
};

enum class LambdaMode { fixed, learnable };

struct LambdaPolicy {
    LambdaMode mode = LambdaMode::learnable;
    double value = 0.5;  // fixed value, or initial value when learnable
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a conv weight [Cout, Cin/g, kh, kw].
template <class T>
Var<T> init_conv_weight(Shape shape, Rng& rng);

template <class T>
struct AttentionParams {
    std::int64_t width = 0;
    int heads = 1;
    Var<T> w_qry, w_key, w_val;     // [width, width, 1, 1]
    Var<T> dw_qry, dw_key, dw_val;  // [width, 1, 3, 3]
    Var<T> w_out;                   // [width, width, 1, 1]
    Var<T> temperature;             // [heads], replaces 1/sqrt(d)

    static AttentionParams init(std::int64_t width, int heads, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

struct GatedDAShape {
    std::int64_t width = 0;
    std::int64_t hidden = 0;
    std::int64_t alpha = 0;
    std::int64_t beta = 0;
    std::int64_t gamma = 0;

    // Throws std::invalid_argument when the split does not produce positive
    // integer parts or gamma differs from width (required by the gate product).
    static GatedDAShape make(std::int64_t width, int expansion, const SplitRatio& split);
};

template <class T>
struct GatedDAParams {
    GatedDAShape dims;
    Var<T> norm_gain;  // [width]
    Var<T> w_exp;      // [hidden, width, 1, 1]
    Var<T> w_depth;    // [alpha, 1, 3, 3]
    Var<T> w_gate;     // [width, beta + alpha, 1, 1]
    Var<T> w_proj;     // [width, width, 1, 1]
    Var<T> tau;        // [1]

    static GatedDAParams init(std::int64_t width, int expansion, const SplitRatio& split, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <class T>
struct FusionParams {
    LambdaMode mode = LambdaMode::learnable;
    Var<T> lambda;  // [1]; requires_grad only when learnable
    Var<T> w_fuse;  // [width, width, 1, 1]

    static FusionParams init(std::int64_t width, const LambdaPolicy& policy, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

template <class T>
struct FFNParams {
    int expansion = 2;
    Var<T> norm_gain;  // [width]
    Var<T> w_up;       // [e*width, width, 1, 1]
    Var<T> w_down;     // [width, e*width, 1, 1]

    static FFNParams init(std::int64_t width, int expansion, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

struct DABOptions {
    int heads = 1;
    int ffn_expansion = 2;
    int gated_expansion = 2;
    SplitRatio split{};
    LambdaPolicy lambda{};
};

template <class T>
struct DABParams {
    std::int64_t width = 0;
    Var<T> pre_norm_gain;  // [width]
    AttentionParams<T> attention;
    GatedDAParams<T> gated;
    FusionParams<T> fusion;
    FFNParams<T> ffn;

    static DABParams init(std::int64_t width, const DABOptions& opts, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& f);
};

// Odd 1-based channels (1, 3, ...) go to the attention branch, even ones to
// the gated branch.
template <class T>
std::pair<Var<T>, Var<T>> skip_split(const Var<T>& f);
template <class T>
Var<T> skip_merge(const Var<T>& att, const Var<T>& gate);

// Transposed (channel-token) attention. When `attention_map` is non-null it
// receives the per-head softmax maps [N, heads, width/heads, width/heads].
template <class T>
Var<T> channel_attention(const Var<T>& x, const AttentionParams<T>& p, Var<T>* attention_map = nullptr);

// `delta_out`, when non-null, receives the per-sample statistic
// sigmoid(mean_c(mu + sigma)) of shape [N].
template <class T>
Var<T> gated_da(const Var<T>& x, const GatedDAParams<T>& p, Var<T>* delta_out = nullptr);

template <class T>
Var<T> spatial_fusion(const Var<T>& att, const Var<T>& gate);
template <class T>
Var<T> frequency_fusion(const Var<T>& att, const Var<T>& gate);
template <class T>
Var<T> sf_fuse(const Var<T>& att, const Var<T>& gate, const Var<T>& f_in, const FusionParams<T>& p);

template <class T>
Var<T> ffn(const Var<T>& x, const FFNParams<T>& p);

template <class T>
Var<T> dab_forward(const Var<T>& x, const DABParams<T>& p);

}  // namespace anyir
