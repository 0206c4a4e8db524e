#include "anyir/ops.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "anyir/fft.hpp"

namespace anyir {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return;
    std::string msg = std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b);
    if (a.size() == b.size()) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i]) {
                msg += " (dimension " + std::to_string(i) + ": " + std::to_string(a[i]) + " vs " +
                       std::to_string(b[i]) + ")";
                break;
            }
        }
    }
    throw ShapeError(msg);
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    require(s.size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  " input, got " + to_string(s));
}

int normalize_axis(int axis, int rank, const char* op) {
    if (axis < 0) axis += rank;
    require(axis >= 0 && axis < rank,
            std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                std::to_string(rank));
    return axis;
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
    std::int64_t outer = 1, extent = 1, inner = 1;
};
AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit r;
    for (int i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

template <class T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src, T alpha = T{1}) {
    T* d = dst.raw();
    const T* s = src.raw();
    const std::int64_t n = dst.numel();
    if (alpha == T{1}) {
        for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
    } else {
        for (std::int64_t i = 0; i < n; ++i) d[i] += alpha * s[i];
    }
}

template <class T>
T dot(const T* a, const T* b, std::int64_t n) {
    T s0{0}, s1{0}, s2{0}, s3{0};
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

template <class T>
Var<T> unary(const Var<T>& x, const char* name, T (*f)(T), T (*df)(T)) {
    BasicTensor<T> out(x.shape());
    const T* src = x.value().raw();
    T* dst = out.raw();
    for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] = f(src[i]);
    return Var<T>::from_op(std::move(out), name, {x}, [df](Node<T>& self) {
        BasicTensor<T>* gx = grad_sink(self, 0);
        if (!gx) return;
        const T* xin = self.parents[0]->value.raw();
        const T* g = self.grad.raw();
        T* d = gx->raw();
        for (std::int64_t i = 0; i < gx->numel(); ++i) d[i] += g[i] * df(xin[i]);
    });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

template <class T>
T gelu_f(T x) {
    const double v = static_cast<double>(x);
    return static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
}
template <class T>
T gelu_df(T x) {
    const double v = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = std::exp(-0.5 * v * v) * (std::numbers::inv_sqrtpi * kInvSqrt2);
    return static_cast<T>(cdf + v * pdf);
}
template <class T>
T sigmoid_f(T x) {
    const double v = static_cast<double>(x);
    return static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
}
template <class T>
T sigmoid_df(T x) {
    const double s = static_cast<double>(sigmoid_f(x));
    return static_cast<T>(s * (1.0 - s));
}
template <class T>
T abs_f(T x) {
    return std::abs(x);
}
template <class T>
T abs_df(T x) {
    return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0});
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    BasicTensor<T> out = a.value();
    accumulate(out, b.value());
    return Var<T>::from_op(std::move(out), "add", {a, b}, [](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) accumulate(*g, self.grad);
        if (auto* g = grad_sink(self, 1)) accumulate(*g, self.grad);
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    BasicTensor<T> out = a.value();
    accumulate(out, b.value(), T{-1});
    return Var<T>::from_op(std::move(out), "sub", {a, b}, [](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) accumulate(*g, self.grad);
        if (auto* g = grad_sink(self, 1)) accumulate(*g, self.grad, T{-1});
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    BasicTensor<T> out(a.shape());
    const T* pa = a.value().raw();
    const T* pb = b.value().raw();
    T* po = out.raw();
    for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    return Var<T>::from_op(std::move(out), "mul", {a, b}, [](Node<T>& self) {
        const T* g = self.grad.raw();
        const std::int64_t n = self.grad.numel();
        if (auto* ga = grad_sink(self, 0)) {
            const T* pb = self.parents[1]->value.raw();
            for (std::int64_t i = 0; i < n; ++i) (*ga)[i] += g[i] * pb[i];
        }
        if (auto* gb = grad_sink(self, 1)) {
            const T* pa = self.parents[0]->value.raw();
            for (std::int64_t i = 0; i < n; ++i) (*gb)[i] += g[i] * pa[i];
        }
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, double c) {
    BasicTensor<T> out = x.value();
    const T tc = static_cast<T>(c);
    for (auto& v : out.data()) v += tc;
    return Var<T>::from_op(std::move(out), "add_scalar", {x}, [](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) accumulate(*g, self.grad);
    });
}

template <class T>
Var<T> mul_scalar(const Var<T>& x, double c) {
    BasicTensor<T> out = x.value();
    const T tc = static_cast<T>(c);
    for (auto& v : out.data()) v *= tc;
    return Var<T>::from_op(std::move(out), "mul_scalar", {x}, [tc](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) accumulate(*g, self.grad, tc);
    });
}

template <class T>
Var<T> abs(const Var<T>& x) {
    return unary<T>(x, "abs", &abs_f<T>, &abs_df<T>);
}

template <class T>
Var<T> gelu(const Var<T>& x) {
    return unary<T>(x, "gelu", &gelu_f<T>, &gelu_df<T>);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return unary<T>(x, "sigmoid", &sigmoid_f<T>, &sigmoid_df<T>);
}

template <class T>
Var<T> scale(const Var<T>& x, const Var<T>& s) {
    require(s.value().numel() == 1,
            "scale: scalar factor expected, got shape " + to_string(s.shape()));
    BasicTensor<T> out = x.value();
    const T k = s.value()[0];
    for (auto& v : out.data()) v *= k;
    return Var<T>::from_op(std::move(out), "scale", {x, s}, [](Node<T>& self) {
        const BasicTensor<T>& xv = self.parents[0]->value;
        const T k = self.parents[1]->value[0];
        if (auto* gx = grad_sink(self, 0)) accumulate(*gx, self.grad, k);
        if (auto* gs = grad_sink(self, 1)) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < xv.numel(); ++i) {
                acc += static_cast<double>(self.grad[i]) * static_cast<double>(xv[i]);
            }
            (*gs)[0] += static_cast<T>(acc);
        }
    });
}

template <class T>
Var<T> scale_axis(const Var<T>& x, const Var<T>& s, int axis) {
    axis = normalize_axis(axis, x.value().rank(), "scale_axis");
    const AxisSplit sp = split_axis(x.shape(), axis);
    require(s.value().rank() == 1 && s.dim(0) == sp.extent,
            "scale_axis: factor shape " + to_string(s.shape()) + " must be [" +
                std::to_string(sp.extent) + "] to match dimension " + std::to_string(axis) +
                " of " + to_string(x.shape()));
    BasicTensor<T> out = x.value();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t e = 0; e < sp.extent; ++e) {
            const T k = s.value()[e];
            T* p = out.raw() + (o * sp.extent + e) * sp.inner;
            for (std::int64_t i = 0; i < sp.inner; ++i) p[i] *= k;
        }
    }
    return Var<T>::from_op(std::move(out), "scale_axis", {x, s}, [sp](Node<T>& self) {
        const BasicTensor<T>& xv = self.parents[0]->value;
        const BasicTensor<T>& sv = self.parents[1]->value;
        BasicTensor<T>* gx = grad_sink(self, 0);
        BasicTensor<T>* gs = grad_sink(self, 1);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                const std::int64_t base = (o * sp.extent + e) * sp.inner;
                const T* g = self.grad.raw() + base;
                if (gx) {
                    T* d = gx->raw() + base;
                    const T k = sv[e];
                    for (std::int64_t i = 0; i < sp.inner; ++i) d[i] += g[i] * k;
                }
                if (gs) (*gs)[e] += dot(g, xv.raw() + base, sp.inner);
            }
        }
    });
}

// ---- reductions ----------------------------------------------------------

template <class T>
Var<T> sum_all(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += static_cast<double>(v);
    BasicTensor<T> out({1}, static_cast<T>(acc));
    return Var<T>::from_op(std::move(out), "sum_all", {x}, [](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) {
            const T v = self.grad[0];
            for (auto& d : g->data()) d += v;
        }
    });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += static_cast<double>(v);
    const double n = static_cast<double>(x.value().numel());
    BasicTensor<T> out({1}, static_cast<T>(acc / n));
    return Var<T>::from_op(std::move(out), "mean_all", {x}, [n](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) {
            const T v = static_cast<T>(static_cast<double>(self.grad[0]) / n);
            for (auto& d : g->data()) d += v;
        }
    });
}

template <class T>
Var<T> mean_axis(const Var<T>& x, int axis) {
    axis = normalize_axis(axis, x.value().rank(), "mean_axis");
    const AxisSplit sp = split_axis(x.shape(), axis);
    Shape out_shape;
    for (int i = 0; i < x.value().rank(); ++i) {
        if (i != axis) out_shape.push_back(x.shape()[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    BasicTensor<T> out(out_shape);
    const T* src = x.value().raw();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            double acc = 0.0;
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                acc += static_cast<double>(src[(o * sp.extent + e) * sp.inner + i]);
            }
            out[o * sp.inner + i] = static_cast<T>(acc / static_cast<double>(sp.extent));
        }
    }
    return Var<T>::from_op(std::move(out), "mean_axis", {x}, [sp](Node<T>& self) {
        BasicTensor<T>* gx = grad_sink(self, 0);
        if (!gx) return;
        const T inv = static_cast<T>(1.0 / static_cast<double>(sp.extent));
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                for (std::int64_t i = 0; i < sp.inner; ++i) {
                    (*gx)[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i] * inv;
                }
            }
        }
    });
}

// ---- shape ---------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    BasicTensor<T> out = x.value().reshaped(std::move(shape));
    return Var<T>::from_op(std::move(out), "reshape", {x}, [](Node<T>& self) {
        if (auto* g = grad_sink(self, 0)) accumulate(*g, self.grad);
    });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const Shape& s0 = parts[0].shape();
    require_rank(s0, 4, "concat_channels");
    std::int64_t total_c = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require_rank(s, 4, "concat_channels");
        require(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                "concat_channels: shape " + to_string(s) + " incompatible with " + to_string(s0) +
                    " outside the channel dimension");
        total_c += s[1];
    }
    const std::int64_t n = s0[0], hw = s0[2] * s0[3];
    BasicTensor<T> out({n, total_c, s0[2], s0[3]});
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::int64_t c = p.dim(1);
        for (std::int64_t b = 0; b < n; ++b) {
            std::copy_n(p.value().raw() + b * c * hw, c * hw, out.raw() + (b * total_c + off) * hw);
        }
        off += c;
    }
    return Var<T>::from_op(std::move(out), "concat_channels", parts,
                           [offsets, total_c, n, hw](Node<T>& self) {
                               for (std::size_t i = 0; i < self.parents.size(); ++i) {
                                   BasicTensor<T>* g = grad_sink(self, i);
                                   if (!g) continue;
                                   const std::int64_t c = g->dim(1);
                                   for (std::int64_t b = 0; b < n; ++b) {
                                       const T* src = self.grad.raw() + (b * total_c + offsets[i]) * hw;
                                       T* dst = g->raw() + b * c * hw;
                                       for (std::int64_t k = 0; k < c * hw; ++k) dst[k] += src[k];
                                   }
                               }
                           });
}

template <class T>
Var<T> gather_channels(const Var<T>& x, std::int64_t start, std::int64_t step, std::int64_t count) {
    require_rank(x.shape(), 4, "gather_channels");
    const std::int64_t c = x.dim(1);
    require(count >= 1 && step >= 1 && start >= 0 && start + (count - 1) * step < c,
            "gather_channels: channel selection start=" + std::to_string(start) +
                " step=" + std::to_string(step) + " count=" + std::to_string(count) +
                " exceeds channel dimension " + std::to_string(c));
    const std::int64_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    BasicTensor<T> out({n, count, x.dim(2), x.dim(3)});
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t k = 0; k < count; ++k) {
            std::copy_n(x.value().raw() + (b * c + start + k * step) * hw, hw,
                        out.raw() + (b * count + k) * hw);
        }
    }
    return Var<T>::from_op(std::move(out), "gather_channels", {x},
                           [=](Node<T>& self) {
                               BasicTensor<T>* g = grad_sink(self, 0);
                               if (!g) return;
                               for (std::int64_t b = 0; b < n; ++b) {
                                   for (std::int64_t k = 0; k < count; ++k) {
                                       const T* src = self.grad.raw() + (b * count + k) * hw;
                                       T* dst = g->raw() + (b * c + start + k * step) * hw;
                                       for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
                                   }
                               }
                           });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, std::int64_t start, std::int64_t count) {
    return gather_channels(x, start, 1, count);
}

template <class T>
Var<T> interleave_channels(const Var<T>& a, const Var<T>& b) {
    require_rank(a.shape(), 4, "interleave_channels");
    require_same_shape(a.shape(), b.shape(), "interleave_channels");
    const std::int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    BasicTensor<T> out({n, 2 * c, a.dim(2), a.dim(3)});
    for (std::int64_t s = 0; s < n; ++s) {
        for (std::int64_t k = 0; k < c; ++k) {
            std::copy_n(a.value().raw() + (s * c + k) * hw, hw, out.raw() + (s * 2 * c + 2 * k) * hw);
            std::copy_n(b.value().raw() + (s * c + k) * hw, hw,
                        out.raw() + (s * 2 * c + 2 * k + 1) * hw);
        }
    }
    return Var<T>::from_op(std::move(out), "interleave_channels", {a, b}, [=](Node<T>& self) {
        for (std::size_t which = 0; which < 2; ++which) {
            BasicTensor<T>* g = grad_sink(self, which);
            if (!g) continue;
            for (std::int64_t s = 0; s < n; ++s) {
                for (std::int64_t k = 0; k < c; ++k) {
                    const T* src = self.grad.raw() + (s * 2 * c + 2 * k + which) * hw;
                    T* dst = g->raw() + (s * c + k) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
                }
            }
        }
    });
}

namespace {

// Index of input element (n, c, y, x) inside the unshuffled layout.
struct ShuffleGeom {
    std::int64_t n, c, h, w, r;  // input to unshuffle: [n, c, h, w]
    std::int64_t spatial_index(std::int64_t b, std::int64_t ch, std::int64_t y, std::int64_t x) const {
        return ((b * c + ch) * h + y) * w + x;
    }
    std::int64_t packed_index(std::int64_t b, std::int64_t ch, std::int64_t y, std::int64_t x) const {
        const std::int64_t oc = ch * r * r + (y % r) * r + (x % r);
        return ((b * c * r * r + oc) * (h / r) + y / r) * (w / r) + x / r;
    }
};

// dir = true: spatial -> packed (unshuffle); false: packed -> spatial.
template <class T>
void shuffle_copy(const ShuffleGeom& g, const T* src, T* dst, bool to_packed, bool add) {
    for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t ch = 0; ch < g.c; ++ch) {
            for (std::int64_t y = 0; y < g.h; ++y) {
                for (std::int64_t x = 0; x < g.w; ++x) {
                    const std::int64_t s = g.spatial_index(b, ch, y, x);
                    const std::int64_t p = g.packed_index(b, ch, y, x);
                    const std::int64_t from = to_packed ? s : p;
                    const std::int64_t to = to_packed ? p : s;
                    if (add) {
                        dst[to] += src[from];
                    } else {
                        dst[to] = src[from];
                    }
                }
            }
        }
    }
}

}  // namespace

template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, int factor) {
    require_rank(x.shape(), 4, "pixel_unshuffle");
    require(factor >= 1, "pixel_unshuffle: factor must be >= 1");
    const Shape& s = x.shape();
    require(s[2] % factor == 0, "pixel_unshuffle: height " + std::to_string(s[2]) +
                                    " (dimension 2) is not divisible by " + std::to_string(factor));
    require(s[3] % factor == 0, "pixel_unshuffle: width " + std::to_string(s[3]) +
                                    " (dimension 3) is not divisible by " + std::to_string(factor));
    const ShuffleGeom g{s[0], s[1], s[2], s[3], factor};
    BasicTensor<T> out({s[0], s[1] * factor * factor, s[2] / factor, s[3] / factor});
    shuffle_copy(g, x.value().raw(), out.raw(), true, false);
    return Var<T>::from_op(std::move(out), "pixel_unshuffle", {x}, [g](Node<T>& self) {
        if (auto* gx = grad_sink(self, 0)) shuffle_copy(g, self.grad.raw(), gx->raw(), false, true);
    });
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int factor) {
    require_rank(x.shape(), 4, "pixel_shuffle");
    require(factor >= 1, "pixel_shuffle: factor must be >= 1");
    const Shape& s = x.shape();
    const std::int64_t rr = static_cast<std::int64_t>(factor) * factor;
    require(s[1] % rr == 0, "pixel_shuffle: channels " + std::to_string(s[1]) +
                                " (dimension 1) are not divisible by " + std::to_string(rr));
    const ShuffleGeom g{s[0], s[1] / rr, s[2] * factor, s[3] * factor, factor};
    BasicTensor<T> out({g.n, g.c, g.h, g.w});
    shuffle_copy(g, x.value().raw(), out.raw(), false, false);
    return Var<T>::from_op(std::move(out), "pixel_shuffle", {x}, [g](Node<T>& self) {
        if (auto* gx = grad_sink(self, 0)) shuffle_copy(g, self.grad.raw(), gx->raw(), true, true);
    });
}

// ---- conv2d --------------------------------------------------------------

namespace {

struct ConvGeom {
    std::int64_t n, cin, h, w, cout, cin_g, kh, kw, ho, wo;
    int stride, pad, groups;
    std::int64_t cout_g() const { return cout / groups; }
};

// Valid output-column range [lo, hi) for kernel column kx at stride 1.
inline void col_range(const ConvGeom& g, std::int64_t kx, std::int64_t& lo, std::int64_t& hi) {
    lo = std::max<std::int64_t>(0, g.pad - kx);
    hi = std::min<std::int64_t>(g.wo, g.w + g.pad - kx);
}

template <class T>
void conv_forward(const ConvGeom& g, const T* in, const T* wt, const T* bias, T* out) {
    const std::int64_t in_plane = g.h * g.w, out_plane = g.ho * g.wo;
    for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            T* o = out + (b * g.cout + co) * out_plane;
            std::fill_n(o, out_plane, bias ? bias[co] : T{0});
            const std::int64_t group = co / g.cout_g();
            for (std::int64_t cl = 0; cl < g.cin_g; ++cl) {
                const T* x = in + (b * g.cin + group * g.cin_g + cl) * in_plane;
                const T* wk = wt + (co * g.cin_g + cl) * g.kh * g.kw;
                if (g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0) {
                    const T wv = wk[0];
                    for (std::int64_t i = 0; i < out_plane; ++i) o[i] += wv * x[i];
                    continue;
                }
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wk[ky * g.kw + kx];
                        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                            const std::int64_t iy = oy * g.stride + ky - g.pad;
                            if (iy < 0 || iy >= g.h) continue;
                            T* orow = o + oy * g.wo;
                            const T* xrow = x + iy * g.w;
                            if (g.stride == 1) {
                                std::int64_t lo, hi;
                                col_range(g, kx, lo, hi);
                                const T* xs = xrow + kx - g.pad;
                                for (std::int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * xs[ox];
                            } else {
                                for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                                    const std::int64_t ix = ox * g.stride + kx - g.pad;
                                    if (ix >= 0 && ix < g.w) orow[ox] += wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv_backward(const ConvGeom& g, const T* in, const T* wt, const T* gout, T* gin, T* gw, T* gb) {
    const std::int64_t in_plane = g.h * g.w, out_plane = g.ho * g.wo;
    for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            const T* go = gout + (b * g.cout + co) * out_plane;
            if (gb) {
                T acc{0};
                for (std::int64_t i = 0; i < out_plane; ++i) acc += go[i];
                gb[co] += acc;
            }
            const std::int64_t group = co / g.cout_g();
            for (std::int64_t cl = 0; cl < g.cin_g; ++cl) {
                const std::int64_t ci = group * g.cin_g + cl;
                const T* x = in + (b * g.cin + ci) * in_plane;
                T* gx = gin ? gin + (b * g.cin + ci) * in_plane : nullptr;
                const T* wk = wt + (co * g.cin_g + cl) * g.kh * g.kw;
                T* gwk = gw ? gw + (co * g.cin_g + cl) * g.kh * g.kw : nullptr;
                if (g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0) {
                    if (gwk) gwk[0] += dot(go, x, out_plane);
                    if (gx) {
                        const T wv = wk[0];
                        for (std::int64_t i = 0; i < out_plane; ++i) gx[i] += wv * go[i];
                    }
                    continue;
                }
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wk[ky * g.kw + kx];
                        T wacc{0};
                        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                            const std::int64_t iy = oy * g.stride + ky - g.pad;
                            if (iy < 0 || iy >= g.h) continue;
                            const T* grow = go + oy * g.wo;
                            if (g.stride == 1) {
                                std::int64_t lo, hi;
                                col_range(g, kx, lo, hi);
                                if (hi <= lo) continue;
                                const std::int64_t shift = iy * g.w + kx - g.pad;
                                if (gwk) wacc += dot(grow + lo, x + shift + lo, hi - lo);
                                if (gx) {
                                    T* gxs = gx + shift;
                                    for (std::int64_t ox = lo; ox < hi; ++ox) gxs[ox] += wv * grow[ox];
                                }
                            } else {
                                for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                                    const std::int64_t ix = ox * g.stride + kx - g.pad;
                                    if (ix < 0 || ix >= g.w) continue;
                                    if (gwk) wacc += grow[ox] * x[iy * g.w + ix];
                                    if (gx) gx[iy * g.w + ix] += wv * grow[ox];
                                }
                            }
                        }
                        if (gwk) gwk[ky * g.kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const std::optional<Var<T>>& bias,
              Conv2dOptions opts) {
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require_rank(xs, 4, "conv2d input");
    require_rank(ws, 4, "conv2d weight");
    require(opts.groups >= 1 && opts.stride >= 1 && opts.padding >= 0,
            "conv2d: stride/groups must be >= 1 and padding >= 0");
    require(xs[1] % opts.groups == 0,
            "conv2d: input channels (dimension 1) = " + std::to_string(xs[1]) +
                " not divisible by groups = " + std::to_string(opts.groups));
    require(ws[0] % opts.groups == 0,
            "conv2d: output channels (weight dimension 0) = " + std::to_string(ws[0]) +
                " not divisible by groups = " + std::to_string(opts.groups));
    require(ws[1] == xs[1] / opts.groups,
            "conv2d: weight dimension 1 = " + std::to_string(ws[1]) + " but input channels / groups = " +
                std::to_string(xs[1] / opts.groups) + " (input " + to_string(xs) + ", weight " +
                to_string(ws) + ")");
    require(xs[2] + 2 * opts.padding >= ws[2] && xs[3] + 2 * opts.padding >= ws[3],
            "conv2d: kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
    if (bias) {
        require(bias->value().rank() == 1 && bias->dim(0) == ws[0],
                "conv2d: bias shape " + to_string(bias->shape()) + " must be [" +
                    std::to_string(ws[0]) + "]");
    }
    ConvGeom g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], ws[2], ws[3], 0, 0,
               opts.stride, opts.padding, opts.groups};
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
    BasicTensor<T> out({g.n, g.cout, g.ho, g.wo});
    conv_forward(g, input.value().raw(), weight.value().raw(), bias ? bias->value().raw() : nullptr,
                 out.raw());
    std::vector<Var<T>> parents{input, weight};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias.has_value();
    return Var<T>::from_op(std::move(out), "conv2d", std::move(parents), [g, has_bias](Node<T>& self) {
        BasicTensor<T>* gin = grad_sink(self, 0);
        BasicTensor<T>* gw = grad_sink(self, 1);
        BasicTensor<T>* gb = has_bias ? grad_sink(self, 2) : nullptr;
        conv_backward(g, self.parents[0]->value.raw(), self.parents[1]->value.raw(), self.grad.raw(),
                      gin ? gin->raw() : nullptr, gw ? gw->raw() : nullptr, gb ? gb->raw() : nullptr);
    });
}

// ---- normalization -------------------------------------------------------

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, double eps) {
    require_rank(x.shape(), 4, "layer_norm");
    const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    require(gain.value().rank() == 1 && gain.dim(0) == c,
            "layer_norm: gain shape " + to_string(gain.shape()) + " must be [" + std::to_string(c) +
                "] (channel dimension 1)");
    BasicTensor<T> xhat(x.shape());
    BasicTensor<T> inv_std({n, hw});
    BasicTensor<T> out(x.shape());
    const T* src = x.value().raw();
    const T* gp = gain.value().raw();
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t p = 0; p < hw; ++p) {
            const T* col = src + b * c * hw + p;
            double mean = 0.0;
            for (std::int64_t k = 0; k < c; ++k) mean += static_cast<double>(col[k * hw]);
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (std::int64_t k = 0; k < c; ++k) {
                const double d = static_cast<double>(col[k * hw]) - mean;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[b * hw + p] = static_cast<T>(is);
            for (std::int64_t k = 0; k < c; ++k) {
                const std::int64_t idx = b * c * hw + k * hw + p;
                const T xh = static_cast<T>((static_cast<double>(src[idx]) - mean) * is);
                xhat[idx] = xh;
                out[idx] = xh * gp[k];
            }
        }
    }
    return Var<T>::from_op(
        std::move(out), "layer_norm", {x, gain},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw](Node<T>& self) {
            const T* gp = self.parents[1]->value.raw();
            const T* g = self.grad.raw();
            if (auto* gg = grad_sink(self, 1)) {
                for (std::int64_t k = 0; k < c; ++k) {
                    double acc = 0.0;
                    for (std::int64_t b = 0; b < n; ++b) {
                        const std::int64_t base = b * c * hw + k * hw;
                        acc += static_cast<double>(dot(g + base, xhat.raw() + base, hw));
                    }
                    (*gg)[k] += static_cast<T>(acc);
                }
            }
            if (auto* gx = grad_sink(self, 0)) {
                for (std::int64_t b = 0; b < n; ++b) {
                    for (std::int64_t p = 0; p < hw; ++p) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::int64_t k = 0; k < c; ++k) {
                            const std::int64_t idx = b * c * hw + k * hw + p;
                            const double gxh = static_cast<double>(g[idx]) * static_cast<double>(gp[k]);
                            m1 += gxh;
                            m2 += gxh * static_cast<double>(xhat[idx]);
                        }
                        m1 /= static_cast<double>(c);
                        m2 /= static_cast<double>(c);
                        const double is = static_cast<double>(inv_std[b * hw + p]);
                        for (std::int64_t k = 0; k < c; ++k) {
                            const std::int64_t idx = b * c * hw + k * hw + p;
                            const double gxh = static_cast<double>(g[idx]) * static_cast<double>(gp[k]);
                            (*gx)[idx] += static_cast<T>(is * (gxh - m1 - static_cast<double>(xhat[idx]) * m2));
                        }
                    }
                }
            }
        });
}

template <class T>
Var<T> spatial_mean(const Var<T>& x) {
    require_rank(x.shape(), 4, "spatial_mean");
    const std::int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    BasicTensor<T> out({x.dim(0), x.dim(1)});
    for (std::int64_t i = 0; i < nc; ++i) {
        double acc = 0.0;
        const T* p = x.value().raw() + i * hw;
        for (std::int64_t k = 0; k < hw; ++k) acc += static_cast<double>(p[k]);
        out[i] = static_cast<T>(acc / static_cast<double>(hw));
    }
    return Var<T>::from_op(std::move(out), "spatial_mean", {x}, [nc, hw](Node<T>& self) {
        BasicTensor<T>* gx = grad_sink(self, 0);
        if (!gx) return;
        for (std::int64_t i = 0; i < nc; ++i) {
            const T v = static_cast<T>(static_cast<double>(self.grad[i]) / static_cast<double>(hw));
            T* d = gx->raw() + i * hw;
            for (std::int64_t k = 0; k < hw; ++k) d[k] += v;
        }
    });
}

template <class T>
Var<T> spatial_std(const Var<T>& x, double delta) {
    require_rank(x.shape(), 4, "spatial_std");
    const std::int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    BasicTensor<T> out({x.dim(0), x.dim(1)});
    BasicTensor<T> means({nc});
    for (std::int64_t i = 0; i < nc; ++i) {
        const T* p = x.value().raw() + i * hw;
        double mean = 0.0;
        for (std::int64_t k = 0; k < hw; ++k) mean += static_cast<double>(p[k]);
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::int64_t k = 0; k < hw; ++k) {
            const double d = static_cast<double>(p[k]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        means[i] = static_cast<T>(mean);
        out[i] = static_cast<T>(std::sqrt(var + delta));
    }
    return Var<T>::from_op(std::move(out), "spatial_std", {x},
                           [nc, hw, means = std::move(means)](Node<T>& self) {
                               BasicTensor<T>* gx = grad_sink(self, 0);
                               if (!gx) return;
                               const T* xv = self.parents[0]->value.raw();
                               for (std::int64_t i = 0; i < nc; ++i) {
                                   const double k = static_cast<double>(self.grad[i]) /
                                                    (static_cast<double>(hw) * static_cast<double>(self.value[i]));
                                   const double m = static_cast<double>(means[i]);
                                   T* d = gx->raw() + i * hw;
                                   const T* p = xv + i * hw;
                                   for (std::int64_t j = 0; j < hw; ++j) {
                                       d[j] += static_cast<T>(k * (static_cast<double>(p[j]) - m));
                                   }
                               }
                           });
}

// ---- softmax / attention helpers -----------------------------------------

template <class T>
Var<T> softmax(const Var<T>& x, int axis) {
    axis = normalize_axis(axis, x.value().rank(), "softmax");
    const AxisSplit sp = split_axis(x.shape(), axis);
    BasicTensor<T> out(x.shape());
    const T* src = x.value().raw();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.extent * sp.inner + i;
            double mx = -INFINITY;
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                mx = std::max(mx, static_cast<double>(src[base + e * sp.inner]));
            }
            double sum = 0.0;
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                sum += std::exp(static_cast<double>(src[base + e * sp.inner]) - mx);
            }
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                out[base + e * sp.inner] =
                    static_cast<T>(std::exp(static_cast<double>(src[base + e * sp.inner]) - mx) / sum);
            }
        }
    }
    return Var<T>::from_op(std::move(out), "softmax", {x}, [sp](Node<T>& self) {
        BasicTensor<T>* gx = grad_sink(self, 0);
        if (!gx) return;
        const T* y = self.value.raw();
        const T* g = self.grad.raw();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
            for (std::int64_t i = 0; i < sp.inner; ++i) {
                const std::int64_t base = o * sp.extent * sp.inner + i;
                double s = 0.0;
                for (std::int64_t e = 0; e < sp.extent; ++e) {
                    const std::int64_t idx = base + e * sp.inner;
                    s += static_cast<double>(g[idx]) * static_cast<double>(y[idx]);
                }
                for (std::int64_t e = 0; e < sp.extent; ++e) {
                    const std::int64_t idx = base + e * sp.inner;
                    (*gx)[idx] += static_cast<T>(static_cast<double>(y[idx]) * (static_cast<double>(g[idx]) - s));
                }
            }
        }
    });
}

template <class T>
Var<T> l2_normalize(const Var<T>& x, int axis, double eps) {
    axis = normalize_axis(axis, x.value().rank(), "l2_normalize");
    const AxisSplit sp = split_axis(x.shape(), axis);
    BasicTensor<T> out(x.shape());
    BasicTensor<T> norms({sp.outer * sp.inner});
    const T* src = x.value().raw();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
            const std::int64_t base = o * sp.extent * sp.inner + i;
            double ss = 0.0;
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                const double v = static_cast<double>(src[base + e * sp.inner]);
                ss += v * v;
            }
            const double nrm = std::max(std::sqrt(ss), eps);
            norms[o * sp.inner + i] = static_cast<T>(nrm);
            for (std::int64_t e = 0; e < sp.extent; ++e) {
                out[base + e * sp.inner] = static_cast<T>(static_cast<double>(src[base + e * sp.inner]) / nrm);
            }
        }
    }
    return Var<T>::from_op(std::move(out), "l2_normalize", {x},
                           [sp, eps, norms = std::move(norms)](Node<T>& self) {
                               BasicTensor<T>* gx = grad_sink(self, 0);
                               if (!gx) return;
                               const T* y = self.value.raw();
                               const T* g = self.grad.raw();
                               for (std::int64_t o = 0; o < sp.outer; ++o) {
                                   for (std::int64_t i = 0; i < sp.inner; ++i) {
                                       const std::int64_t base = o * sp.extent * sp.inner + i;
                                       const double nrm = static_cast<double>(norms[o * sp.inner + i]);
                                       double s = 0.0;
                                       const bool clamped = nrm <= eps;
                                       if (!clamped) {
                                           for (std::int64_t e = 0; e < sp.extent; ++e) {
                                               const std::int64_t idx = base + e * sp.inner;
                                               s += static_cast<double>(g[idx]) * static_cast<double>(y[idx]);
                                           }
                                       }
                                       for (std::int64_t e = 0; e < sp.extent; ++e) {
                                           const std::int64_t idx = base + e * sp.inner;
                                           (*gx)[idx] += static_cast<T>(
                                               (static_cast<double>(g[idx]) - static_cast<double>(y[idx]) * s) / nrm);
                                       }
                                   }
                               }
                           });
}

namespace {

struct MatGeom {
    std::int64_t batch, m, k, p;
};

// c[m,p] (+)= sum_k a[m,k] * b[k,p]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * p;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T av = a[i * k + kk];
            const T* brow = b + kk * p;
            for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,p] (+)= sum_k a[m,k] * b[p,k]
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < p; ++j) c[i * p + j] += dot(a + i * k, b + j * k, k);
    }
}

// c[m,p] (+)= sum_k a[k,m] * b[k,p]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t p) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
        for (std::int64_t i = 0; i < m; ++i) {
            const T av = a[kk * m + i];
            T* crow = c + i * p;
            const T* brow = b + kk * p;
            for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

MatGeom batch_geom(const Shape& a, const Shape& b, bool transpose_b, const char* op) {
    require_rank(a, 4, op);
    require_rank(b, 4, op);
    require(a[0] == b[0] && a[1] == b[1],
            std::string(op) + ": batch dimensions differ " + to_string(a) + " vs " + to_string(b));
    const std::int64_t bk = transpose_b ? b[3] : b[2];
    require(a[3] == bk, std::string(op) + ": inner dimension mismatch, a dimension 3 = " +
                            std::to_string(a[3]) + " vs b dimension " + (transpose_b ? "3" : "2") +
                            " = " + std::to_string(bk));
    return {a[0] * a[1], a[2], a[3], transpose_b ? b[2] : b[3]};
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const MatGeom g = batch_geom(a.shape(), b.shape(), false, "matmul");
    BasicTensor<T> out({a.dim(0), a.dim(1), g.m, g.p});
    for (std::int64_t i = 0; i < g.batch; ++i) {
        gemm_nn(a.value().raw() + i * g.m * g.k, b.value().raw() + i * g.k * g.p, out.raw() + i * g.m * g.p,
                g.m, g.k, g.p);
    }
    return Var<T>::from_op(std::move(out), "matmul", {a, b}, [g](Node<T>& self) {
        const T* av = self.parents[0]->value.raw();
        const T* bv = self.parents[1]->value.raw();
        BasicTensor<T>* ga = grad_sink(self, 0);
        BasicTensor<T>* gb = grad_sink(self, 1);
        for (std::int64_t i = 0; i < g.batch; ++i) {
            const T* gc = self.grad.raw() + i * g.m * g.p;
            // dA = dC * B^T ; dB = A^T * dC
            if (ga) gemm_nt(gc, bv + i * g.k * g.p, ga->raw() + i * g.m * g.k, g.m, g.p, g.k);
            if (gb) gemm_tn(av + i * g.m * g.k, gc, gb->raw() + i * g.k * g.p, g.k, g.m, g.p);
        }
    });
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    const MatGeom g = batch_geom(a.shape(), b.shape(), true, "matmul_nt");
    BasicTensor<T> out({a.dim(0), a.dim(1), g.m, g.p});
    for (std::int64_t i = 0; i < g.batch; ++i) {
        gemm_nt(a.value().raw() + i * g.m * g.k, b.value().raw() + i * g.p * g.k, out.raw() + i * g.m * g.p,
                g.m, g.k, g.p);
    }
    return Var<T>::from_op(std::move(out), "matmul_nt", {a, b}, [g](Node<T>& self) {
        const T* av = self.parents[0]->value.raw();
        const T* bv = self.parents[1]->value.raw();
        BasicTensor<T>* ga = grad_sink(self, 0);
        BasicTensor<T>* gb = grad_sink(self, 1);
        for (std::int64_t i = 0; i < g.batch; ++i) {
            const T* gc = self.grad.raw() + i * g.m * g.p;
            // C = A B^T: dA = dC * B ; dB = dC^T * A
            if (ga) gemm_nn(gc, bv + i * g.p * g.k, ga->raw() + i * g.m * g.k, g.m, g.p, g.k);
            if (gb) gemm_tn(gc, av + i * g.m * g.k, gb->raw() + i * g.p * g.k, g.p, g.m, g.k);
        }
    });
}

// ---- frequency -----------------------------------------------------------

namespace {

// Adjoint of rfft2: x[h,w] = Re( sum_{k, l < W/2+1} G[k,l] e^{+i theta} ).
template <class T>
void rfft2_adjoint(const BasicTensor<T>& packed, std::int64_t h, std::int64_t w, BasicTensor<T>& gx) {
    using cd = std::complex<double>;
    const std::int64_t nc = packed.dim(0) * packed.dim(1), wf = fft::half_width(w);
    std::vector<cd> plane(static_cast<std::size_t>(h * wf));
    std::vector<cd> col(static_cast<std::size_t>(h));
    std::vector<cd> row(static_cast<std::size_t>(w));
    for (std::int64_t i = 0; i < nc; ++i) {
        const T* src = packed.raw() + i * h * 2 * wf;
        for (std::int64_t j = 0; j < h * wf; ++j) {
            plane[j] = cd(static_cast<double>(src[2 * j]), static_cast<double>(src[2 * j + 1]));
        }
        for (std::int64_t l = 0; l < wf; ++l) {
            for (std::int64_t y = 0; y < h; ++y) col[y] = plane[y * wf + l];
            fft::transform(col, true);
            for (std::int64_t y = 0; y < h; ++y) plane[y * wf + l] = col[y];
        }
        T* dst = gx.raw() + i * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            std::fill(row.begin(), row.end(), cd(0.0, 0.0));
            for (std::int64_t l = 0; l < wf; ++l) row[l] = plane[y * wf + l];
            fft::transform(row, true);
            for (std::int64_t x = 0; x < w; ++x) dst[y * w + x] += static_cast<T>(row[x].real());
        }
    }
}

}  // namespace

template <class T>
Var<T> rfft2(const Var<T>& x) {
    require_rank(x.shape(), 4, "rfft2");
    const std::int64_t h = x.dim(2), w = x.dim(3);
    return Var<T>::from_op(fft::rfft2(x.value()), "rfft2", {x}, [h, w](Node<T>& self) {
        if (auto* gx = grad_sink(self, 0)) rfft2_adjoint(self.grad, h, w, *gx);
    });
}

template <class T>
Var<T> irfft2(const Var<T>& spectrum, std::int64_t height, std::int64_t width) {
    return Var<T>::from_op(fft::irfft2(spectrum.value(), height, width), "irfft2", {spectrum},
                           [height, width](Node<T>& self) {
                               BasicTensor<T>* gs = grad_sink(self, 0);
                               if (!gs) return;
                               // d/dS of (1/HW) sum c_l Re(S e^{i theta}) is (c_l/HW) rfft2(g).
                               const BasicTensor<T> spec = fft::rfft2(self.grad);
                               const std::int64_t wf = fft::half_width(width);
                               const double inv = 1.0 / static_cast<double>(height * width);
                               const std::int64_t rows = spec.numel() / (2 * wf);
                               for (std::int64_t r = 0; r < rows; ++r) {
                                   for (std::int64_t l = 0; l < wf; ++l) {
                                       const T k = static_cast<T>(fft::column_weight(l, width) * inv);
                                       const std::int64_t idx = r * 2 * wf + 2 * l;
                                       (*gs)[idx] += k * spec[idx];
                                       (*gs)[idx + 1] += k * spec[idx + 1];
                                   }
                               }
                           });
}

// ---- instantiation -------------------------------------------------------

#define ANYIR_INSTANTIATE_OPS(T)                                                                    \
    template Var<T> add(const Var<T>&, const Var<T>&);                                              \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
    template Var<T> add_scalar(const Var<T>&, double);                                              \
    template Var<T> mul_scalar(const Var<T>&, double);                                              \
    template Var<T> abs(const Var<T>&);                                                             \
    template Var<T> gelu(const Var<T>&);                                                            \
    template Var<T> sigmoid(const Var<T>&);                                                         \
    template Var<T> scale(const Var<T>&, const Var<T>&);                                            \
    template Var<T> scale_axis(const Var<T>&, const Var<T>&, int);                                  \
    template Var<T> sum_all(const Var<T>&);                                                         \
    template Var<T> mean_all(const Var<T>&);                                                        \
    template Var<T> mean_axis(const Var<T>&, int);                                                  \
    template Var<T> reshape(const Var<T>&, Shape);                                                  \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
    template Var<T> slice_channels(const Var<T>&, std::int64_t, std::int64_t);                      \
    template Var<T> gather_channels(const Var<T>&, std::int64_t, std::int64_t, std::int64_t);       \
    template Var<T> interleave_channels(const Var<T>&, const Var<T>&);                              \
    template Var<T> pixel_unshuffle(const Var<T>&, int);                                            \
    template Var<T> pixel_shuffle(const Var<T>&, int);                                              \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, Conv2dOptions); \
    template Var<T> layer_norm(const Var<T>&, const Var<T>&, double);                               \
    template Var<T> spatial_mean(const Var<T>&);                                                    \
    template Var<T> spatial_std(const Var<T>&, double);                                             \
    template Var<T> softmax(const Var<T>&, int);                                                    \
    template Var<T> l2_normalize(const Var<T>&, int, double);                                       \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
    template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                        \
    template Var<T> rfft2(const Var<T>&);                                                           \
    template Var<T> irfft2(const Var<T>&, std::int64_t, std::int64_t);

ANYIR_INSTANTIATE_OPS(float)
ANYIR_INSTANTIATE_OPS(double)

#undef ANYIR_INSTANTIATE_OPS

}  // namespace anyir
