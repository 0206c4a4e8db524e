#include "anyir/efficiency.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace anyir {

namespace {

struct Walker {
    const ModelConfig& cfg;
    std::vector<ModuleCost> modules;

    ModuleCost& open(std::string name) {
        modules.push_back(ModuleCost{std::move(name)});
        return modules.back();
    }

    static void conv(ModuleCost& m, std::int64_t cout, std::int64_t cin_per_group, std::int64_t k, std::int64_t pixels) {
        m.conv_macs += static_cast<double>(cout * cin_per_group * k * k) * static_cast<double>(pixels);
        m.params += cout * cin_per_group * k * k;
    }

    static double fft(std::int64_t channels, std::int64_t pixels) {
        const double hw = static_cast<double>(pixels);
        return 2.5 * hw * std::log2(hw) * static_cast<double>(channels);
    }

    void dab(ModuleCost& m, std::int64_t width, int heads, std::int64_t pixels) const {
        const std::int64_t c = width / 2;
        m.params += width;  // pre-norm gain
        // attention branch
        for (int i = 0; i < 3; ++i) {
            conv(m, c, c, 1, pixels);
            conv(m, c, 1, 3, pixels);
        }
        const std::int64_t ch = c / heads;
        m.attention_macs += 2.0 * static_cast<double>(ch * ch * heads) * static_cast<double>(pixels);
        conv(m, c, c, 1, pixels);
        m.params += heads;  // temperatures
        // gated branch
        const GatedDAShape g = GatedDAShape::make(c, cfg.gated_expansion, cfg.split);
        m.params += c + 1;  // norm gain, tau
        conv(m, g.hidden, c, 1, pixels);
        conv(m, g.alpha, 1, 3, pixels);
        conv(m, c, g.beta + g.alpha, 1, pixels);
        conv(m, c, c, 1, pixels);
        // fusion: two forward transforms, one inverse
        m.fft_macs += 3.0 * fft(c, pixels);
        conv(m, width, width, 1, pixels);
        if (cfg.lambda.mode == LambdaMode::learnable) m.params += 1;
        // ffn
        m.params += width;
        conv(m, cfg.ffn_expansion * width, width, 1, pixels);
        conv(m, width, cfg.ffn_expansion * width, 1, pixels);
    }
};

}  // namespace

double CostReport::conv_macs() const {
    return std::accumulate(modules.begin(), modules.end(), 0.0, [](double s, const ModuleCost& m) { return s + m.conv_macs; });
}
double CostReport::attention_macs() const {
    return std::accumulate(modules.begin(), modules.end(), 0.0,
                           [](double s, const ModuleCost& m) { return s + m.attention_macs; });
}
double CostReport::fft_macs() const {
    return std::accumulate(modules.begin(), modules.end(), 0.0, [](double s, const ModuleCost& m) { return s + m.fft_macs; });
}
double CostReport::total_macs() const { return conv_macs() + attention_macs() + fft_macs(); }
std::int64_t CostReport::params() const {
    std::int64_t p = 0;
    for (const auto& m : modules) p += m.params;
    return p;
}

nlohmann::json CostReport::to_json() const {
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : modules) {
        mods.push_back({{"name", m.name},
                        {"conv_macs", m.conv_macs},
                        {"attention_macs", m.attention_macs},
                        {"fft_macs", m.fft_macs},
                        {"macs", m.macs()},
                        {"params", m.params}});
    }
    return {{"input", {{"height", height}, {"width", width}}},
            {"modules", mods},
            {"conv_macs", conv_macs()},
            {"attention_macs", attention_macs()},
            {"fft_macs", fft_macs()},
            {"total_macs", total_macs()},
            {"total_flops", total_flops()},
            {"params", params()}};
}

std::string CostReport::to_table() const {
    std::ostringstream os;
    os << "input " << height << "x" << width << "\n";
    os << std::left << std::setw(14) << "module" << std::right << std::setw(12) << "params" << std::setw(14) << "conv GMAC"
       << std::setw(14) << "attn GMAC" << std::setw(14) << "fft GMAC" << "\n";
    os << std::fixed << std::setprecision(4);
    auto row = [&](const std::string& name, std::int64_t p, double cv, double at, double ff) {
        os << std::left << std::setw(14) << name << std::right << std::setw(12) << p << std::setw(14) << cv / 1e9
           << std::setw(14) << at / 1e9 << std::setw(14) << ff / 1e9 << "\n";
    };
    for (const auto& m : modules) row(m.name, m.params, m.conv_macs, m.attention_macs, m.fft_macs);
    row("total", params(), conv_macs(), attention_macs(), fft_macs());
    os << std::setprecision(3) << "MACs  " << total_macs() / 1e9 << " G\n";
    os << "FLOPs " << total_flops() / 1e9 << " G (2 x MACs)\n";
    return os.str();
}

CostReport count_flops(const ModelConfig& cfg, std::int64_t height, std::int64_t width) {
    if (height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0) {
        throw ShapeError("count_flops: size " + std::to_string(height) + "x" + std::to_string(width) +
                         " must be positive multiples of 8");
    }
    cfg.validate();
    Walker wk{cfg, {}};
    auto pixels = [&](int l) { return (height >> l) * (width >> l); };
    const std::int64_t c = cfg.embed_dim;

    ModuleCost& embed = wk.open("patch_embed");
    Walker::conv(embed, c, 3, 3, pixels(0));
    embed.params += c;
    for (int l = 0; l < kLevels; ++l) {
        const std::int64_t w = cfg.level_width(l);
        ModuleCost& enc = wk.open("encoder" + std::to_string(l));
        for (int i = 0; i < cfg.blocks[l]; ++i) wk.dab(enc, w, cfg.heads[l], pixels(l));
        if (l < kLevels - 1) Walker::conv(wk.open("down" + std::to_string(l)), 2 * w, 4 * w, 1, pixels(l + 1));
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        const std::int64_t w = cfg.level_width(l);
        const std::int64_t in = l == kLevels - 2 ? cfg.level_width(kLevels - 1) : 2 * cfg.level_width(l + 1);
        Walker::conv(wk.open("up" + std::to_string(l)), 4 * w, in, 1, pixels(l + 1));
        Walker::conv(wk.open("skip" + std::to_string(l)), 2 * w, 2 * w, 1, pixels(l));
        ModuleCost& dec = wk.open("decoder" + std::to_string(l));
        for (int i = 0; i < cfg.blocks[l]; ++i) wk.dab(dec, 2 * w, cfg.heads[l], pixels(l));
    }
    ModuleCost& ref = wk.open("refine");
    for (int i = 0; i < cfg.refinement_blocks; ++i) wk.dab(ref, 2 * c, cfg.heads[0], pixels(0));
    ModuleCost& out = wk.open("output");
    Walker::conv(out, 3, 2 * c, 3, pixels(0));
    out.params += 3;

    CostReport r;
    r.height = height;
    r.width = width;
    r.modules = std::move(wk.modules);
    return r;
}

// ---- image quality --------------------------------------------------------------

template <class T>
double psnr(const BasicTensor<T>& a, const BasicTensor<T>& b, double data_range) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (!(data_range > 0)) throw std::invalid_argument("psnr: data_range must be positive");
    if (a.numel() == 0) throw ShapeError("psnr: empty input");
    double se = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> ssim_window_1d() {
    std::vector<double> g(kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - r;
        g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

namespace {

// Valid separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w, const std::vector<double>& g) {
    const std::int64_t k = static_cast<std::int64_t>(g.size());
    const std::int64_t oh = h - k + 1, ow = w - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h * ow));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < k; ++t) acc += g[t] * src[y * w + x + t];
            rows[y * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < k; ++t) acc += g[t] * rows[(y + t) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

}  // namespace

template <class T>
double ssim(const BasicTensor<T>& a, const BasicTensor<T>& b, double data_range) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.rank() != 4) throw ShapeError("ssim: expected [N,C,H,W], got " + to_string(a.shape()));
    if (!(data_range > 0)) throw std::invalid_argument("ssim: data_range must be positive");
    const std::int64_t h = a.dim(2), w = a.dim(3);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                         std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
    }
    const double c1 = (kSsimK1 * data_range) * (kSsimK1 * data_range);
    const double c2 = (kSsimK2 * data_range) * (kSsimK2 * data_range);
    const auto g = ssim_window_1d();
    const std::int64_t planes = a.dim(0) * a.dim(1), hw = h * w;
    double total = 0.0;
    std::vector<double> pa(hw), pb(hw), aa(hw), bb(hw), ab(hw);
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t i = 0; i < hw; ++i) {
            pa[i] = static_cast<double>(a[p * hw + i]);
            pb[i] = static_cast<double>(b[p * hw + i]);
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = filter_valid(pa, h, w, g), mu_b = filter_valid(pb, h, w, g);
        const auto e_aa = filter_valid(aa, h, w, g), e_bb = filter_valid(bb, h, w, g), e_ab = filter_valid(ab, h, w, g);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double va = e_aa[i] - mu_a[i] * mu_a[i];
            const double vb = e_bb[i] - mu_b[i] * mu_b[i];
            const double cov = e_ab[i] - mu_a[i] * mu_b[i];
            acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / static_cast<double>(planes);
}

template double psnr(const BasicTensor<float>&, const BasicTensor<float>&, double);
template double psnr(const BasicTensor<double>&, const BasicTensor<double>&, double);
template double ssim(const BasicTensor<float>&, const BasicTensor<float>&, double);
template double ssim(const BasicTensor<double>&, const BasicTensor<double>&, double);

}  // namespace anyir
