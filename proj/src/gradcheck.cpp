#include "anyir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "anyir/ops.hpp"

namespace anyir {

namespace {

double projected_value(const DiffFn& fn, const std::vector<TensorD>& inputs, const TensorD& proj) {
    std::vector<VarD> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(VarD::leaf(t));
    const TensorD out = fn(vars).value();
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i) acc += out[i] * proj[i];
    return acc;
}

TensorD uniform_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(s);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

GradCheckResult grad_check(const DiffFn& fn, const std::vector<TensorD>& inputs, double h,
                           std::uint64_t projection_seed,
                           const std::vector<std::size_t>& constant_inputs) {
    auto is_constant = [&](std::size_t i) {
        return std::find(constant_inputs.begin(), constant_inputs.end(), i) != constant_inputs.end();
    };

    GradTape<double> tape;
    std::vector<VarD> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        vars.push_back(VarD::leaf(inputs[i], !is_constant(i)));
    }
    VarD out;
    TensorD proj;
    {
        auto rec = tape.record();
        out = fn(vars);
        Rng rng(projection_seed);
        proj = uniform_tensor(out.shape(), rng, 0.5, 1.5);
        VarD loss = sum_all(mul(out, VarD::leaf(proj)));
        tape.backward(loss);
    }

    GradCheckResult result;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (is_constant(i)) continue;
        const TensorD& analytic = vars[i].grad();
        std::vector<TensorD> work = inputs;
        TensorD numeric(inputs[i].shape());
        for (std::int64_t k = 0; k < inputs[i].numel(); ++k) {
            const double x0 = inputs[i][k];
            work[i][k] = x0 + h;
            const double fp = projected_value(fn, work, proj);
            work[i][k] = x0 - h;
            const double fm = projected_value(fn, work, proj);
            work[i][k] = x0;
            numeric[k] = (fp - fm) / (2.0 * h);
        }
        double scale = 1e-12, worst = 0.0;
        std::int64_t worst_k = 0;
        for (std::int64_t k = 0; k < numeric.numel(); ++k) {
            scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
            const double d = std::abs(analytic[k] - numeric[k]);
            if (d > worst) {
                worst = d;
                worst_k = k;
            }
        }
        const double rel = worst / scale;
        if (rel >= result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_input = i;
            result.worst_index = worst_k;
        }
    }
    return result;
}

namespace {

std::vector<GradCheckCase> build_cases() {
    std::vector<GradCheckCase> cases;
    auto add_case = [&](std::string name, std::vector<std::vector<Shape>> shapes, DiffFn fn) {
        cases.push_back({std::move(name), std::move(shapes), std::move(fn), nullptr});
    };
    const std::vector<std::vector<Shape>> unary4 = {{{1, 2, 3, 3}}, {{2, 3, 4, 2}}, {{1, 1, 5, 4}}};
    const std::vector<std::vector<Shape>> binary4 = {
        {{1, 2, 3, 3}, {1, 2, 3, 3}}, {{2, 3, 2, 4}, {2, 3, 2, 4}}, {{1, 4, 1, 5}, {1, 4, 1, 5}}};

    add_case("add", binary4, [](const auto& v) { return add(v[0], v[1]); });
    add_case("sub", binary4, [](const auto& v) { return sub(v[0], v[1]); });
    add_case("mul", binary4, [](const auto& v) { return mul(v[0], v[1]); });
    add_case("add_scalar", unary4, [](const auto& v) { return add_scalar(v[0], 0.75); });
    add_case("mul_scalar", unary4, [](const auto& v) { return mul_scalar(v[0], -1.5); });
    cases.push_back({"abs", unary4, [](const auto& v) { return abs(v[0]); },
                     [](const Shape& s, std::size_t, Rng& rng) {
                         // Keep away from the kink at 0.
                         TensorD t(s);
                         for (auto& x : t.data()) x = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
                         return t;
                     }});
    add_case("gelu", unary4, [](const auto& v) { return gelu(v[0]); });
    add_case("sigmoid", unary4, [](const auto& v) { return sigmoid(v[0]); });
    add_case("scale", {{{1, 2, 3, 3}, {1}}, {{2, 1, 2, 2}, {1}}, {{3, 2}, {1}}},
             [](const auto& v) { return scale(v[0], v[1]); });
    add_case("scale_axis", {{{2, 3, 2, 2}, {2}}, {{3, 4}, {3}}, {{1, 2, 3, 4}, {1}}},
             [](const auto& v) { return scale_axis(v[0], v[1], 0); });
    add_case("sum_all", unary4, [](const auto& v) { return sum_all(v[0]); });
    add_case("mean_all", unary4, [](const auto& v) { return mean_all(v[0]); });
    add_case("mean_axis", {{{2, 3}}, {{3, 5}}, {{1, 4}}}, [](const auto& v) { return mean_axis(v[0], 1); });
    add_case("reshape", unary4, [](const auto& v) {
        return reshape(v[0], Shape{v[0].value().numel()});
    });
    add_case("concat_channels", {{{1, 1, 2, 2}, {1, 2, 2, 2}}, {{2, 2, 3, 1}, {2, 1, 3, 1}}, {{1, 3, 2, 3}, {1, 3, 2, 3}}},
             [](const auto& v) { return concat_channels<double>({v[0], v[1]}); });
    add_case("slice_channels", {{{1, 3, 2, 2}}, {{2, 4, 2, 1}}, {{1, 5, 3, 3}}},
             [](const auto& v) { return slice_channels(v[0], 1, 2); });
    add_case("gather_channels", {{{1, 4, 2, 2}}, {{2, 6, 1, 3}}, {{1, 8, 2, 2}}},
             [](const auto& v) { return gather_channels(v[0], 1, 2, 2); });
    add_case("interleave_channels", binary4, [](const auto& v) { return interleave_channels(v[0], v[1]); });
    add_case("pixel_unshuffle", {{{1, 1, 2, 2}}, {{2, 2, 4, 2}}, {{1, 3, 4, 4}}},
             [](const auto& v) { return pixel_unshuffle(v[0], 2); });
    add_case("pixel_shuffle", {{{1, 4, 1, 1}}, {{2, 8, 2, 1}}, {{1, 4, 3, 2}}},
             [](const auto& v) { return pixel_shuffle(v[0], 2); });
    add_case("conv2d_3x3_bias", {{{1, 2, 4, 4}, {3, 2, 3, 3}, {3}}, {{2, 3, 5, 3}, {2, 3, 3, 3}, {2}}, {{1, 1, 3, 3}, {1, 1, 3, 3}, {1}}},
             [](const auto& v) { return conv2d(v[0], v[1], std::optional<VarD>(v[2]), {1, 1, 1}); });
    add_case("conv2d_1x1", {{{1, 3, 2, 2}, {4, 3, 1, 1}}, {{2, 2, 3, 3}, {2, 2, 1, 1}}, {{1, 4, 1, 5}, {3, 4, 1, 1}}},
             [](const auto& v) { return conv2d(v[0], v[1]); });
    add_case("conv2d_depthwise", {{{1, 2, 4, 4}, {2, 1, 3, 3}}, {{2, 3, 3, 5}, {3, 1, 3, 3}}, {{1, 4, 2, 2}, {4, 1, 3, 3}}},
             [](const auto& v) { return conv2d(v[0], v[1], {1, 1, static_cast<int>(v[0].dim(1))}); });
    add_case("conv2d_stride2", {{{1, 2, 5, 5}, {2, 2, 3, 3}}, {{1, 1, 4, 6}, {2, 1, 3, 3}}, {{2, 2, 4, 4}, {1, 2, 1, 1}}},
             [](const auto& v) { return conv2d(v[0], v[1], {2, 1, 1}); });
    add_case("layer_norm", {{{1, 3, 2, 2}, {3}}, {{2, 4, 1, 3}, {4}}, {{1, 5, 3, 3}, {5}}},
             [](const auto& v) { return layer_norm(v[0], v[1]); });
    add_case("spatial_mean", unary4, [](const auto& v) { return spatial_mean(v[0]); });
    add_case("spatial_std", unary4, [](const auto& v) { return spatial_std(v[0]); });
    add_case("softmax", {{{1, 2, 3, 4}}, {{2, 1, 2, 5}}, {{3, 6}}}, [](const auto& v) { return softmax(v[0], -1); });
    add_case("softmax_axis1", {{{1, 3, 2, 2}}, {{2, 4, 1, 2}}, {{2, 5}}}, [](const auto& v) { return softmax(v[0], 1); });
    add_case("l2_normalize", {{{1, 2, 3, 4}}, {{2, 1, 2, 6}}, {{1, 3, 3, 3}}},
             [](const auto& v) { return l2_normalize(v[0], -1); });
    add_case("matmul", {{{1, 1, 2, 3}, {1, 1, 3, 4}}, {{2, 2, 3, 2}, {2, 2, 2, 3}}, {{1, 3, 2, 2}, {1, 3, 2, 5}}},
             [](const auto& v) { return matmul(v[0], v[1]); });
    add_case("matmul_nt", {{{1, 1, 2, 3}, {1, 1, 4, 3}}, {{2, 2, 3, 2}, {2, 2, 3, 2}}, {{1, 3, 2, 5}, {1, 3, 2, 5}}},
             [](const auto& v) { return matmul_nt(v[0], v[1]); });
    add_case("rfft2", {{{1, 1, 4, 4}}, {{1, 2, 3, 5}}, {{2, 1, 8, 6}}}, [](const auto& v) { return rfft2(v[0]); });
    // The spectrum input of irfft2 is an arbitrary packed tensor; H and W are
    // recovered from its shape (W is taken even).
    add_case("irfft2", {{{1, 1, 4, 6}}, {{1, 2, 3, 4}}, {{2, 1, 8, 10}}}, [](const auto& v) {
        const std::int64_t h = v[0].dim(2), w = (v[0].dim(3) / 2 - 1) * 2;
        return irfft2(v[0], h, w);
    });
    return cases;
}

std::string describe(const std::vector<Shape>& shapes) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (i) os << ", ";
        os << to_string(shapes[i]);
    }
    return os.str();
}

}  // namespace

const std::vector<GradCheckCase>& registered_grad_cases() {
    static const std::vector<GradCheckCase> cases = build_cases();
    return cases;
}

std::vector<GradCheckReportLine> run_registered_grad_checks(double h, double tolerance,
                                                            std::uint64_t seed) {
    std::vector<GradCheckReportLine> lines;
    Rng base(seed);
    std::uint64_t index = 0;
    for (const auto& c : registered_grad_cases()) {
        for (std::size_t trial = 0; trial < c.shape_sets.size(); ++trial) {
            Rng rng = base.stream(c.op, index++);
            std::vector<TensorD> inputs;
            for (std::size_t i = 0; i < c.shape_sets[trial].size(); ++i) {
                const Shape& s = c.shape_sets[trial][i];
                inputs.push_back(c.make_input ? c.make_input(s, i, rng) : uniform_tensor(s, rng));
            }
            const GradCheckResult r = grad_check(c.fn, inputs, h, seed + index);
            lines.push_back({c.op, trial, describe(c.shape_sets[trial]), r.max_rel_error,
                             r.max_rel_error <= tolerance});
        }
    }
    return lines;
}

}  // namespace anyir
