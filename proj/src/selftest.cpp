#include "anyir/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "anyir/degradations.hpp"
#include "anyir/efficiency.hpp"
#include "anyir/fft.hpp"
#include "anyir/gradcheck.hpp"
#include "anyir/ops.hpp"
#include "anyir/training.hpp"

namespace anyir {

namespace {

template <class T>
BasicTensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    BasicTensor<T> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <class T>
bool same_bits(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

ModelConfig minimal_config(std::uint64_t seed) {
    ModelConfig c;
    c.embed_dim = 4;
    c.blocks = {1, 1, 1, 1};
    c.refinement_blocks = 1;
    c.zero_init_output = false;
    c.seed = seed;
    return c;
}

}  // namespace

double end_to_end_grad_error(std::uint64_t seed) {
    auto model = ModelD::build(minimal_config(seed));
    Rng rng = Rng(seed).stream("selftest.e2e");
    const TensorD img = random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
    const TensorD target = random_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
    TensorD weight;
    for (const auto& p : model.parameters())
        if (p.name == "patch_embed.weight") weight = p.var.value();
    const DiffFn fn = [&](const std::vector<VarD>& in) {
        model.set_parameter("patch_embed.weight", in[0]);
        return mean_all(abs(sub(model.forward(VarD::leaf(img)), VarD::leaf(target))));
    };
    return grad_check(fn, {weight}, 1e-6, seed + 1).max_rel_error;
}

std::vector<CheckOutcome> run_selftest(std::uint64_t seed, const std::function<void(const CheckOutcome&)>& progress) {
    std::vector<CheckOutcome> out;
    auto check = [&](const std::string& module, const std::string& name, const std::function<std::string()>& body) {
        CheckOutcome o{module, name, false, ""};
        try {
            o.detail = body();
            o.passed = o.detail.empty() || o.detail.rfind("ok", 0) == 0;
        } catch (const std::exception& e) {
            o.detail = std::string("exception: ") + e.what();
        }
        if (progress) progress(o);
        out.push_back(o);
    };
    Rng rng = Rng(seed).stream("selftest");

    check("tensor_core", "registered op gradients", [&] {
        const auto lines = run_registered_grad_checks(1e-3, 1e-4, seed);
        double worst = 0;
        std::string failed;
        for (const auto& l : lines) {
            worst = std::max(worst, l.max_rel_error);
            if (!l.passed) failed += " " + l.op;
        }
        if (!failed.empty()) return "failed:" + failed;
        return "ok " + std::to_string(lines.size()) + " trials, worst " + fmt(worst);
    });
    check("tensor_core", "fft round trip", [&] {
        double worst = 0;
        for (const Shape& s : {Shape{1, 1, 4, 4}, Shape{2, 3, 8, 6}, Shape{1, 2, 7, 5}}) {
            const TensorD x = random_tensor<double>(s, rng);
            const TensorD y = fft::irfft2(fft::rfft2(x), s[2], s[3]);
            for (std::int64_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
        }
        return worst <= 1e-5 ? "ok max " + fmt(worst) : "max error " + fmt(worst);
    });
    check("tensor_core", "pixel shuffle inverts unshuffle", [&] {
        const Tensor x = random_tensor<float>({2, 3, 8, 6}, rng);
        return same_bits(pixel_shuffle(pixel_unshuffle(VarF::leaf(x))).value(), x) ? "" : "mismatch";
    });
    check("blocks", "skip merge inverts split", [&] {
        const Tensor x = random_tensor<float>({1, 10, 4, 4}, rng);
        const auto [a, g] = skip_split(VarF::leaf(x));
        return same_bits(skip_merge(a, g).value(), x) ? "" : "mismatch";
    });
    check("blocks", "fusion lambda extremes and zero projection", [&] {
        Rng init = rng.stream("fusion");
        const VarF att = VarF::leaf(random_tensor<float>({1, 4, 6, 6}, rng));
        const VarF gate = VarF::leaf(random_tensor<float>({1, 4, 6, 6}, rng));
        const VarF f_in = VarF::leaf(random_tensor<float>({1, 8, 6, 6}, rng));
        auto p = FusionParams<float>::init(8, {LambdaMode::fixed, 1.0}, init);
        const auto spatial = spatial_fusion(att, gate);
        const Tensor want = add(conv2d(spatial, p.w_fuse), f_in).value();
        if (!same_bits(sf_fuse(att, gate, f_in, p).value(), want)) return std::string("lambda=1 mismatch");
        p.w_fuse = VarF::leaf(Tensor::zeros({8, 8, 1, 1}));
        if (!same_bits(sf_fuse(att, gate, f_in, p).value(), f_in.value())) return std::string("W_fuse=0 mismatch");
        return std::string();
    });
    check("network", "zero output conv gives the identity", [&] {
        ModelConfig c = minimal_config(seed);
        c.zero_init_output = true;
        const Tensor x = random_tensor<float>({1, 3, 16, 24}, rng, 0.0, 1.0);
        return same_bits(ModelF::build(c).infer(x), x) ? "" : "output differs from input";
    });
    check("network", "end-to-end gradient", [&] {
        const double e = end_to_end_grad_error(seed);
        return e <= 1e-3 ? "ok " + fmt(e) : "relative error " + fmt(e);
    });
    check("network", "checkpoint round trip", [&] {
        const auto m = ModelF::build(minimal_config(seed));
        const auto path = std::filesystem::temp_directory_path() / ("anyir_selftest_" + std::to_string(seed) + ".ckpt");
        save_checkpoint(m, path, {3, {}});
        const auto back = load_checkpoint(path);
        std::filesystem::remove(path);
        const Tensor x = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
        return same_bits(back.model.infer(x), m.infer(x)) && back.meta.step == 3 ? "" : "mismatch";
    });
    check("efficiency_metrics", "preset parameter budgets", [&] {
        const double tiny = static_cast<double>(count_params(ModelF::build(ModelConfig::tiny())));
        const double small = static_cast<double>(count_params(ModelF::build(ModelConfig::small())));
        const bool ok = std::abs(tiny / 5.74e6 - 1) <= 0.1 && std::abs(small / 8.51e6 - 1) <= 0.1;
        return (ok ? "ok " : "") + std::string("tiny ") + fmt(tiny) + ", small " + fmt(small);
    });
    check("efficiency_metrics", "psnr and ssim anchors", [&] {
        const Tensor a = Tensor::full({1, 3, 16, 16}, 0.4f);
        const Tensor b = Tensor::full({1, 3, 16, 16}, 0.5f);
        if (std::abs(psnr(a, b, 1.0) - 20.0) > 0.01) return std::string("psnr of a 0.1 offset is not 20 dB");
        const Tensor x = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
        if (ssim(x, x, 1.0) != 1.0) return std::string("ssim(x, x) != 1");
        return std::string();
    });
    check("degradations", "haze identity and composite order", [&] {
        const Tensor x = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
        Rng r1(seed), r2(seed), r3(seed);
        if (!same_bits(degrade(x, DegradationSpec::haze(1.0, 0.9), r1), x)) return std::string("haze t=1 changed x");
        const DegradationSpec comp{{Haze{1.0, 0.9}, GaussianNoise{25.0}}};
        if (!same_bits(degrade(x, comp, r2), degrade(x, DegradationSpec::gaussian(25.0), r3)))
            return std::string("composite differs");
        return std::string();
    });
    check("training", "schedule and optimizer anchors", [&] {
        if (cosine_lr(0, 10, 2e-4, 1e-6) != 2e-4 || cosine_lr(10, 10, 2e-4, 1e-6) != 1e-6)
            return std::string("cosine endpoints");
        std::vector<NamedParam<float>> p{{"x", VarF::leaf(Tensor::full({2}, 1.0f), true)}};
        AdamState st;
        adam_step(p, {Tensor::zeros({2})}, st, 1e-3);
        if (p[0].var.value()[0] != 1.0f) return std::string("zero gradient moved a parameter");
        return std::string();
    });
    return out;
}

}  // namespace anyir
