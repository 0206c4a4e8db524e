#include "anyir/blocks.hpp"

#include <cmath>
#include <stdexcept>

#include "anyir/ops.hpp"

namespace anyir {

namespace {

template <class T>
Var<T> param(BasicTensor<T> value) {
    return Var<T>::leaf(std::move(value), true);
}

template <class T>
Var<T> ones_param(std::int64_t n) {
    return param(BasicTensor<T>::full({n}, T{1}));
}

std::string join(const std::string& prefix, const char* name) {
    return prefix.empty() ? std::string(name) : prefix + "." + name;
}

std::int64_t exact_part(double fraction, std::int64_t hidden, const char* which) {
    const double raw = fraction * static_cast<double>(hidden);
    const auto rounded = static_cast<std::int64_t>(std::llround(raw));
    if (!(fraction > 0.0) || std::abs(raw - static_cast<double>(rounded)) > 1e-9 || rounded < 1) {
        throw std::invalid_argument(std::string("gated_da: split fraction ") + which + " = " +
                                    std::to_string(fraction) + " of hidden " + std::to_string(hidden) +
                                    " is not a positive integer channel count");
    }
    return rounded;
}

}  // namespace

template <class T>
Var<T> init_conv_weight(Shape shape, Rng& rng) {
    if (shape.size() != 4) throw ShapeError("init_conv_weight: expected rank-4 shape");
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    const double bound = 1.0 / std::sqrt(fan_in);
    BasicTensor<T> w(std::move(shape));
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return param(std::move(w));
}

// ---- parameter containers ----------------------------------------------------

template <class T>
AttentionParams<T> AttentionParams<T>::init(std::int64_t width, int heads, Rng& rng) {
    if (width < 1 || heads < 1 || width % heads != 0) {
        throw std::invalid_argument("channel_attention: heads " + std::to_string(heads) +
                                    " must divide branch width " + std::to_string(width));
    }
    AttentionParams p;
    p.width = width;
    p.heads = heads;
    p.w_qry = init_conv_weight<T>({width, width, 1, 1}, rng);
    p.dw_qry = init_conv_weight<T>({width, 1, 3, 3}, rng);
    p.w_key = init_conv_weight<T>({width, width, 1, 1}, rng);
    p.dw_key = init_conv_weight<T>({width, 1, 3, 3}, rng);
    p.w_val = init_conv_weight<T>({width, width, 1, 1}, rng);
    p.dw_val = init_conv_weight<T>({width, 1, 3, 3}, rng);
    p.w_out = init_conv_weight<T>({width, width, 1, 1}, rng);
    p.temperature = ones_param<T>(heads);
    return p;
}

template <class T>
void AttentionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join(prefix, "w_qry"), w_qry);
    f(join(prefix, "dw_qry"), dw_qry);
    f(join(prefix, "w_key"), w_key);
    f(join(prefix, "dw_key"), dw_key);
    f(join(prefix, "w_val"), w_val);
    f(join(prefix, "dw_val"), dw_val);
    f(join(prefix, "w_out"), w_out);
    f(join(prefix, "temperature"), temperature);
}

GatedDAShape GatedDAShape::make(std::int64_t width, int expansion, const SplitRatio& split) {
    if (width < 1 || expansion < 1) {
        throw std::invalid_argument("gated_da: width and expansion must be positive");
    }
    if (std::abs(split.alpha + split.beta + split.gamma - 1.0) > 1e-9) {
        throw std::invalid_argument("gated_da: split fractions must sum to 1");
    }
    GatedDAShape s;
    s.width = width;
    s.hidden = width * expansion;
    s.alpha = exact_part(split.alpha, s.hidden, "alpha");
    s.beta = exact_part(split.beta, s.hidden, "beta");
    s.gamma = exact_part(split.gamma, s.hidden, "gamma");
    if (s.alpha + s.beta + s.gamma != s.hidden) {
        throw std::invalid_argument("gated_da: split parts do not add up to hidden width");
    }
    if (s.gamma != width) {
        throw std::invalid_argument("gated_da: gamma part has " + std::to_string(s.gamma) +
                                    " channels but the gate product needs " + std::to_string(width));
    }
    return s;
}

template <class T>
GatedDAParams<T> GatedDAParams<T>::init(std::int64_t width, int expansion, const SplitRatio& split,
                                        Rng& rng) {
    GatedDAParams p;
    p.dims = GatedDAShape::make(width, expansion, split);
    p.norm_gain = ones_param<T>(width);
    p.w_exp = init_conv_weight<T>({p.dims.hidden, width, 1, 1}, rng);
    p.w_depth = init_conv_weight<T>({p.dims.alpha, 1, 3, 3}, rng);
    p.w_gate = init_conv_weight<T>({width, p.dims.beta + p.dims.alpha, 1, 1}, rng);
    p.w_proj = init_conv_weight<T>({width, width, 1, 1}, rng);
    p.tau = ones_param<T>(1);
    return p;
}

template <class T>
void GatedDAParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join(prefix, "norm_gain"), norm_gain);
    f(join(prefix, "w_exp"), w_exp);
    f(join(prefix, "w_depth"), w_depth);
    f(join(prefix, "w_gate"), w_gate);
    f(join(prefix, "w_proj"), w_proj);
    f(join(prefix, "tau"), tau);
}

template <class T>
FusionParams<T> FusionParams<T>::init(std::int64_t width, const LambdaPolicy& policy, Rng& rng) {
    FusionParams p;
    p.mode = policy.mode;
    p.lambda = Var<T>::leaf(BasicTensor<T>::full({1}, static_cast<T>(policy.value)),
                            policy.mode == LambdaMode::learnable);
    p.w_fuse = init_conv_weight<T>({width, width, 1, 1}, rng);
    return p;
}

template <class T>
void FusionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join(prefix, "lambda"), lambda);
    f(join(prefix, "w_fuse"), w_fuse);
}

template <class T>
FFNParams<T> FFNParams<T>::init(std::int64_t width, int expansion, Rng& rng) {
    if (expansion < 1) throw std::invalid_argument("ffn: expansion must be >= 1");
    FFNParams p;
    p.expansion = expansion;
    p.norm_gain = ones_param<T>(width);
    p.w_up = init_conv_weight<T>({expansion * width, width, 1, 1}, rng);
    p.w_down = init_conv_weight<T>({width, expansion * width, 1, 1}, rng);
    return p;
}

template <class T>
void FFNParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join(prefix, "norm_gain"), norm_gain);
    f(join(prefix, "w_up"), w_up);
    f(join(prefix, "w_down"), w_down);
}

template <class T>
DABParams<T> DABParams<T>::init(std::int64_t width, const DABOptions& opts, Rng& rng) {
    if (width < 2 || width % 2 != 0) {
        throw std::invalid_argument("dab: block width " + std::to_string(width) + " must be even");
    }
    DABParams p;
    p.width = width;
    p.pre_norm_gain = ones_param<T>(width);
    p.attention = AttentionParams<T>::init(width / 2, opts.heads, rng);
    p.gated = GatedDAParams<T>::init(width / 2, opts.gated_expansion, opts.split, rng);
    p.fusion = FusionParams<T>::init(width, opts.lambda, rng);
    p.ffn = FFNParams<T>::init(width, opts.ffn_expansion, rng);
    return p;
}

template <class T>
void DABParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
    f(join(prefix, "pre_norm_gain"), pre_norm_gain);
    attention.visit(join(prefix, "attention"), f);
    gated.visit(join(prefix, "gated"), f);
    fusion.visit(join(prefix, "fusion"), f);
    ffn.visit(join(prefix, "ffn"), f);
}

// ---- forward operations --------------------------------------------------------

template <class T>
std::pair<Var<T>, Var<T>> skip_split(const Var<T>& f) {
    if (f.value().rank() != 4) throw ShapeError("skip_split: expected [N,C,H,W], got " + to_string(f.shape()));
    const std::int64_t c = f.dim(1);
    if (c % 2 != 0) throw ShapeError("skip_split: channel count " + std::to_string(c) + " is odd");
    return {gather_channels(f, 0, 2, c / 2), gather_channels(f, 1, 2, c / 2)};
}

template <class T>
Var<T> skip_merge(const Var<T>& att, const Var<T>& gate) {
    return interleave_channels(att, gate);
}

template <class T>
Var<T> channel_attention(const Var<T>& x, const AttentionParams<T>& p, Var<T>* attention_map) {
    if (x.value().rank() != 4 || x.dim(1) != p.width) {
        throw ShapeError("channel_attention: expected " + std::to_string(p.width) + " channels, got " +
                         to_string(x.shape()));
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int groups = static_cast<int>(c);
    const Conv2dOptions depthwise{1, 1, groups};
    const Shape tokens{n, p.heads, c / p.heads, h * w};

    Var<T> q = reshape(conv2d(conv2d(x, p.w_qry), p.dw_qry, depthwise), tokens);
    Var<T> k = reshape(conv2d(conv2d(x, p.w_key), p.dw_key, depthwise), tokens);
    Var<T> v = reshape(conv2d(conv2d(x, p.w_val), p.dw_val, depthwise), tokens);
    q = l2_normalize(q, 3);
    k = l2_normalize(k, 3);

    Var<T> scores = scale_axis(matmul_nt(q, k), p.temperature, 1);
    Var<T> attn = softmax(scores, 3);
    if (attention_map) *attention_map = attn;
    Var<T> out = reshape(matmul(attn, v), Shape{n, c, h, w});
    return conv2d(out, p.w_out);
}

template <class T>
Var<T> gated_da(const Var<T>& x, const GatedDAParams<T>& p, Var<T>* delta_out) {
    const GatedDAShape& d = p.dims;
    if (x.value().rank() != 4 || x.dim(1) != d.width) {
        throw ShapeError("gated_da: expected " + std::to_string(d.width) + " channels, got " +
                         to_string(x.shape()));
    }
    Var<T> f_hat = layer_norm(x, p.norm_gain);
    ChannelStats<T> stats = channel_stats(f_hat);
    // Per-sample scalar: mean over channels of (mu + sigma).
    Var<T> delta = sigmoid(mean_axis(add(stats.mean, stats.std), 1));
    if (delta_out) *delta_out = delta;
    Var<T> tau_adj = scale(delta, p.tau);

    Var<T> f_exp = conv2d(f_hat, p.w_exp);
    Var<T> gamma = slice_channels(f_exp, 0, d.gamma);
    Var<T> beta = slice_channels(f_exp, d.gamma, d.beta);
    Var<T> alpha = slice_channels(f_exp, d.gamma + d.beta, d.alpha);

    Var<T> alpha_mod = scale_axis(conv2d(alpha, p.w_depth, {1, 1, static_cast<int>(d.alpha)}),
                                  add_scalar(tau_adj, 1.0), 0);
    Var<T> gated = mul(gelu(gamma), conv2d(concat_channels<T>({beta, alpha_mod}), p.w_gate));
    return conv2d(add(gated, x), p.w_proj);
}

template <class T>
Var<T> spatial_fusion(const Var<T>& att, const Var<T>& gate) {
    if (att.shape() != gate.shape()) {
        throw ShapeError("spatial_fusion: shape mismatch " + to_string(att.shape()) + " vs " +
                         to_string(gate.shape()));
    }
    return concat_channels<T>({add(att, sigmoid(gate)), add(gate, sigmoid(att))});
}

template <class T>
Var<T> frequency_fusion(const Var<T>& att, const Var<T>& gate) {
    if (att.shape() != gate.shape()) {
        throw ShapeError("frequency_fusion: shape mismatch " + to_string(att.shape()) + " vs " +
                         to_string(gate.shape()));
    }
    Var<T> spectrum = add(rfft2(att), rfft2(gate));
    Var<T> f = irfft2(spectrum, att.dim(2), att.dim(3));
    return concat_channels<T>({f, f});
}

template <class T>
Var<T> sf_fuse(const Var<T>& att, const Var<T>& gate, const Var<T>& f_in, const FusionParams<T>& p) {
    if (f_in.value().rank() != 4 || f_in.dim(1) != 2 * att.dim(1)) {
        throw ShapeError("sf_fuse: F_in " + to_string(f_in.shape()) + " must have twice the branch width " +
                         std::to_string(att.dim(1)));
    }
    Var<T> one_minus = add_scalar(mul_scalar(p.lambda, -1.0), 1.0);
    Var<T> fused = add(scale(spatial_fusion(att, gate), p.lambda), scale(frequency_fusion(att, gate), one_minus));
    return add(conv2d(fused, p.w_fuse), f_in);
}

template <class T>
Var<T> ffn(const Var<T>& x, const FFNParams<T>& p) {
    return add(conv2d(gelu(conv2d(layer_norm(x, p.norm_gain), p.w_up)), p.w_down), x);
}

template <class T>
Var<T> dab_forward(const Var<T>& x, const DABParams<T>& p) {
    if (x.value().rank() != 4 || x.dim(1) != p.width) {
        throw ShapeError("dab: expected " + std::to_string(p.width) + " channels, got " + to_string(x.shape()));
    }
    auto [a, g] = skip_split(layer_norm(x, p.pre_norm_gain));
    Var<T> att = channel_attention(a, p.attention);
    Var<T> gate = gated_da(g, p.gated);
    return ffn(sf_fuse(att, gate, x, p.fusion), p.ffn);
}

#define ANYIR_INSTANTIATE_BLOCKS(T)                                                               \
    template Var<T> init_conv_weight<T>(Shape, Rng&);                                             \
    template struct AttentionParams<T>;                                                           \
    template struct GatedDAParams<T>;                                                             \
    template struct FusionParams<T>;                                                              \
    template struct FFNParams<T>;                                                                 \
    template struct DABParams<T>;                                                                 \
    template std::pair<Var<T>, Var<T>> skip_split<T>(const Var<T>&);                              \
    template Var<T> skip_merge<T>(const Var<T>&, const Var<T>&);                                  \
    template Var<T> channel_attention<T>(const Var<T>&, const AttentionParams<T>&, Var<T>*);      \
    template Var<T> gated_da<T>(const Var<T>&, const GatedDAParams<T>&, Var<T>*);                          \
    template Var<T> spatial_fusion<T>(const Var<T>&, const Var<T>&);                              \
    template Var<T> frequency_fusion<T>(const Var<T>&, const Var<T>&);                            \
    template Var<T> sf_fuse<T>(const Var<T>&, const Var<T>&, const Var<T>&, const FusionParams<T>&); \
    template Var<T> ffn<T>(const Var<T>&, const FFNParams<T>&);                                   \
    template Var<T> dab_forward<T>(const Var<T>&, const DABParams<T>&);

ANYIR_INSTANTIATE_BLOCKS(float)
ANYIR_INSTANTIATE_BLOCKS(double)

}  // namespace anyir
