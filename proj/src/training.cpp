#include "anyir/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "anyir/efficiency.hpp"
#include "anyir/ops.hpp"

namespace anyir {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train config: steps must be >= 1, got " + std::to_string(steps));
    if (batch < 1) throw ConfigError("train config: batch must be >= 1, got " + std::to_string(batch));
    if (crop < 8 || crop % 8 != 0) {
        throw ConfigError("train config: crop must be a positive multiple of 8, got " + std::to_string(crop));
    }
    if (!(lr0 >= 0) || !std::isfinite(lr0)) throw ConfigError("train config: lr0 must be finite and >= 0");
    if (!(lr_min >= 0) || lr_min > lr0) throw ConfigError("train config: lr_min must satisfy 0 <= lr_min <= lr0");
    if (lr_min == 0 && lr0 > 0) throw ConfigError("train config: lr_min must be > 0 when lr0 > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
        throw ConfigError("train config: betas must lie in [0, 1)");
    }
    if (!(fourier_weight >= 0) || !std::isfinite(fourier_weight)) {
        throw ConfigError("train config: fourier_weight must be finite and >= 0");
    }
    if (eval_interval < 0) throw ConfigError("train config: eval_interval must be >= 0");
}

json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch", c.batch},
            {"crop", c.crop},
            {"lr0", c.lr0},
            {"lr_min", c.lr_min},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"fourier_weight", c.fourier_weight},
            {"eval_interval", c.eval_interval},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    TrainConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "steps") c.steps = value.get<int>();
            else if (key == "batch") c.batch = value.get<int>();
            else if (key == "crop") c.crop = value.get<std::int64_t>();
            else if (key == "lr0") c.lr0 = value.get<double>();
            else if (key == "lr_min") c.lr_min = value.get<double>();
            else if (key == "beta1") c.beta1 = value.get<double>();
            else if (key == "beta2") c.beta2 = value.get<double>();
            else if (key == "fourier_weight") c.fourier_weight = value.get<double>();
            else if (key == "eval_interval") c.eval_interval = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("train config: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

template <class T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("l1_loss: shapes " + to_string(pred.shape()) + " and " + to_string(target.shape()) +
                         " differ");
    }
    return mean_all(abs(sub(pred, target)));
}

template <class T>
Var<T> fourier_loss(const Var<T>& pred, const Var<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("fourier_loss: shapes " + to_string(pred.shape()) + " and " + to_string(target.shape()) +
                         " differ");
    }
    // The transform is linear, so one FFT of the difference suffices.
    return mean_all(abs(rfft2(sub(pred, target))));
}

template Var<float> l1_loss(const Var<float>&, const Var<float>&);
template Var<double> l1_loss(const Var<double>&, const Var<double>&);
template Var<float> fourier_loss(const Var<float>&, const Var<float>&);
template Var<double> fourier_loss(const Var<double>&, const Var<double>&);

double cosine_lr(std::int64_t t, std::int64_t total, double lr0, double lr_min) {
    if (total < 1) throw std::invalid_argument("cosine_lr: total must be >= 1");
    if (t <= 0) return lr0;
    if (t >= total) return lr_min;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(kPi * static_cast<double>(t) / static_cast<double>(total)));
}

void adam_step(const std::vector<NamedParam<float>>& params, const std::vector<Tensor>& grads, AdamState& state,
               double lr) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: one gradient per parameter expected");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].var.requires_grad()) continue;
        if (grads[i].shape() != params[i].var.shape()) {
            throw ShapeError("adam_step: gradient for " + params[i].name + " has shape " + to_string(grads[i].shape()) +
                             ", parameter has " + to_string(params[i].var.shape()));
        }
        for (float g : grads[i].data()) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + params[i].name);
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Tensor::zeros(p.var.shape()));
            state.v.push_back(Tensor::zeros(p.var.shape()));
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].var.requires_grad()) continue;
        Var<float> var = params[i].var;
        auto p = var.mutable_value().data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        const auto g = grads[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double step = lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps);
            p[k] = static_cast<float>(p[k] - step);
        }
    }
}

AugmentDraw draw_augment(std::int64_t height, std::int64_t width, std::int64_t crop, Rng& rng) {
    if (crop < 1 || crop > height || crop > width) {
        throw ShapeError("augment: crop " + std::to_string(crop) + " exceeds image " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    AugmentDraw d;
    d.top = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(height - crop + 1)));
    d.left = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(width - crop + 1)));
    d.hflip = rng.coin();
    d.vflip = rng.coin();
    return d;
}

Tensor apply_augment(const Tensor& image, std::int64_t crop, const AugmentDraw& d) {
    if (image.rank() != 4) throw ShapeError("augment: expected [N,C,H,W], got " + to_string(image.shape()));
    const std::int64_t n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
    if (d.top < 0 || d.left < 0 || d.top + crop > h || d.left + crop > w) {
        throw ShapeError("augment: crop " + std::to_string(crop) + " at (" + std::to_string(d.top) + ", " +
                         std::to_string(d.left) + ") exceeds image " + std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor out({n, c, crop, crop});
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < crop; ++y)
                for (std::int64_t x = 0; x < crop; ++x) {
                    const std::int64_t sy = d.vflip ? crop - 1 - y : y;
                    const std::int64_t sx = d.hflip ? crop - 1 - x : x;
                    out.at(b, ch, y, x) = image.at(b, ch, d.top + sy, d.left + sx);
                }
    return out;
}

ImagePair augment(const ImagePair& pair, std::int64_t crop, Rng& rng) {
    if (pair.clean.shape() != pair.degraded.shape()) {
        throw ShapeError("augment: pair shapes " + to_string(pair.clean.shape()) + " and " +
                         to_string(pair.degraded.shape()) + " differ");
    }
    const AugmentDraw d = draw_augment(pair.clean.dim(2), pair.clean.dim(3), crop, rng);
    return {apply_augment(pair.clean, crop, d), apply_augment(pair.degraded, crop, d)};
}

EvalResult evaluate(const ModelF& model, const PairSet& set) {
    if (set.pairs.empty()) throw std::invalid_argument("evaluate: empty pair set");
    EvalResult r;
    for (const auto& p : set.pairs) {
        Tensor out = model.infer(p.degraded);
        for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
        r.psnr += psnr(p.clean, out, 1.0);
        r.ssim += ssim(p.clean, out, 1.0);
        r.baseline_psnr += psnr(p.clean, p.degraded, 1.0);
        r.baseline_ssim += ssim(p.clean, p.degraded, 1.0);
    }
    const auto n = static_cast<double>(set.pairs.size());
    r.psnr /= n;
    r.ssim /= n;
    r.baseline_psnr /= n;
    r.baseline_ssim /= n;
    return r;
}

namespace {

// Write then rename so an interrupted save never clobbers the previous file.
void write_checkpoint(const ModelF& model, const std::filesystem::path& dir, const CheckpointMeta& meta) {
    const auto tmp = dir / "checkpoint.bin.tmp";
    save_checkpoint(model, tmp, meta);
    std::filesystem::rename(tmp, dir / "checkpoint.bin");
}

}  // namespace

TrainResult train(ModelF& model, const PairSet& train_set, const PairSet& val_set, const TrainConfig& cfg,
                  const TrainOutputs& out) {
    cfg.validate();
    if (train_set.pairs.empty()) throw std::invalid_argument("train: empty training set");
    if (val_set.pairs.empty()) throw std::invalid_argument("train: empty validation set");
    for (const auto& p : train_set.pairs) {
        if (p.clean.dim(2) < cfg.crop || p.clean.dim(3) < cfg.crop) {
            throw ConfigError("train: crop " + std::to_string(cfg.crop) + " exceeds training image " +
                              std::to_string(p.clean.dim(2)) + "x" + std::to_string(p.clean.dim(3)));
        }
    }

    std::ofstream metrics;
    if (!out.dir.empty()) {
        std::filesystem::create_directories(out.dir);
        metrics.open(out.dir / "metrics.jsonl", std::ios::trunc);
        if (!metrics) throw std::runtime_error("train: cannot write " + (out.dir / "metrics.jsonl").string());
    }
    TrainResult result;
    auto emit = [&](const json& rec) {
        result.log.push_back(rec);
        if (metrics.is_open()) metrics << rec.dump() << "\n" << std::flush;
        if (out.on_record) out.on_record(rec);
    };

    const Rng base(cfg.seed);
    Rng batch_rng = base.stream("batch");
    Rng aug_rng = base.stream("augment");
    AdamState adam;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    const auto params = model.parameters();
    const std::int64_t plane = 3 * cfg.crop * cfg.crop;

    auto eval_and_save = [&](int step) {
        const EvalResult e = evaluate(model, val_set);
        emit({{"step", step}, {"psnr", e.psnr}, {"ssim", e.ssim}});
        if (!out.dir.empty()) write_checkpoint(model, out.dir, {step, batch_rng.state()});
        return e;
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        const double lr = cosine_lr(step - 1, cfg.steps, cfg.lr0, cfg.lr_min);
        Tensor clean({cfg.batch, 3, cfg.crop, cfg.crop}), degraded({cfg.batch, 3, cfg.crop, cfg.crop});
        for (int b = 0; b < cfg.batch; ++b) {
            const auto idx = static_cast<std::size_t>(batch_rng.below(train_set.pairs.size()));
            const ImagePair a = augment(train_set.pairs[idx], cfg.crop, aug_rng);
            std::copy(a.clean.data().begin(), a.clean.data().end(), clean.data().begin() + b * plane);
            std::copy(a.degraded.data().begin(), a.degraded.data().end(), degraded.data().begin() + b * plane);
        }

        GradTape<float> tape;
        Var<float> l1, fourier, total;
        {
            auto rec = tape.record();
            const Var<float> target = Var<float>::leaf(std::move(clean));
            const Var<float> pred = model.forward(Var<float>::leaf(std::move(degraded)));
            l1 = l1_loss(pred, target);
            fourier = fourier_loss(pred, target);
            total = add(l1, mul_scalar(fourier, cfg.fourier_weight));
        }
        const double total_v = total.value()[0];
        if (!std::isfinite(total_v)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                               (out.dir.empty() ? std::string() : "; last good checkpoint kept in " + out.dir.string()));
        }
        tape.backward(total);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const auto& p : params) {
            grads.push_back(p.var.requires_grad() ? p.var.grad() : Tensor());
            Var<float>(p.var).zero_grad();
        }
        adam_step(params, grads, adam, lr);
        emit({{"step", step},
              {"lr", lr},
              {"l1", static_cast<double>(l1.value()[0])},
              {"fourier", static_cast<double>(fourier.value()[0])},
              {"total", total_v}});
        result.steps_done = step;
        if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0 && step != cfg.steps) eval_and_save(step);
    }
    result.final_eval = eval_and_save(cfg.steps);
    return result;
}

}  // namespace anyir
