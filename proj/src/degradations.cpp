#include "anyir/degradations.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <sstream>

#include "anyir/image_io.hpp"

namespace anyir {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

template <class... F>
struct Overload : F... {
    using F::operator()...;
};
template <class... F>
Overload(F...) -> Overload<F...>;

void check_image(const Tensor& x) {
    const auto& s = x.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != 3) {
        throw ShapeError("degrade: expected a [1,3,H,W] image, got " + to_string(s));
    }
}

void clamp01(Tensor& x) {
    for (auto& v : x.data()) v = std::clamp(v, 0.0f, 1.0f);
}

void apply(Tensor& y, const GaussianNoise& g, Rng& rng) {
    const double sigma = g.sigma / 255.0;
    for (auto& v : y.data()) v = static_cast<float>(v + sigma * rng.normal());
    clamp01(y);
}

void apply(Tensor& y, const Haze& h, Rng&) {
    const float t = static_cast<float>(h.t), a = static_cast<float>(h.airlight * (1.0 - h.t));
    for (auto& v : y.data()) v = v * t + a;
}

void apply(Tensor& y, const Rain& r, Rng& rng) {
    const std::int64_t h = y.dim(2), w = y.dim(3);
    const float add = static_cast<float>(r.intensity);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w));
    for (int s = 0; s < r.streaks; ++s) {
        std::fill(mask.begin(), mask.end(), 0);
        const double x0 = rng.uniform(0.0, static_cast<double>(w));
        const double y0 = rng.uniform(0.0, static_cast<double>(h));
        const double len = r.length * rng.uniform(0.6, 1.0);
        const double ang = (r.angle + rng.uniform(-5.0, 5.0)) * kPi / 180.0;
        const double dx = std::cos(ang), dy = std::sin(ang);
        const int samples = static_cast<int>(std::ceil(2.0 * len)) + 1;
        for (int k = 0; k < samples; ++k) {
            const double f = len * k / std::max(samples - 1, 1);
            const auto px = static_cast<std::int64_t>(std::floor(x0 + f * dx));
            const auto py = static_cast<std::int64_t>(std::floor(y0 + f * dy));
            if (px < 0 || px >= w || py < 0 || py >= h) continue;
            mask[static_cast<std::size_t>(py * w + px)] = 1;
        }
        for (std::int64_t i = 0; i < h * w; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            for (int c = 0; c < 3; ++c) y[c * h * w + i] += add;
        }
    }
    clamp01(y);
}

std::string two_digits(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

void DegradationSpec::validate() const {
    if (ops.empty()) throw DegradationError("degradation: operator list is empty");
    for (const auto& op : ops) {
        std::visit(Overload{
                       [](const GaussianNoise& g) {
                           if (!(g.sigma > 0) || !std::isfinite(g.sigma))
                               throw DegradationError("gaussian: sigma must be > 0, got " + two_digits(g.sigma));
                       },
                       [](const Haze& h) {
                           if (!(h.t > 0 && h.t <= 1)) throw DegradationError("haze: t must be in (0, 1], got " + two_digits(h.t));
                           if (!(h.airlight >= 0.7 && h.airlight <= 1))
                               throw DegradationError("haze: airlight must be in [0.7, 1], got " + two_digits(h.airlight));
                       },
                       [](const Rain& r) {
                           if (r.streaks < 0) throw DegradationError("rain: streak count must be >= 0");
                           if (!(r.length > 0)) throw DegradationError("rain: length must be > 0");
                           if (!(r.intensity > 0 && r.intensity <= 1))
                               throw DegradationError("rain: intensity must be in (0, 1]");
                           if (!std::isfinite(r.angle)) throw DegradationError("rain: angle must be finite");
                       },
                   },
                   op);
    }
}

std::string DegradationSpec::describe() const {
    std::string out;
    for (const auto& op : ops) {
        if (!out.empty()) out += "+";
        out += std::visit(Overload{
                              [](const GaussianNoise& g) { return "gaussian(sigma=" + two_digits(g.sigma) + ")"; },
                              [](const Haze& h) {
                                  return "haze(t=" + two_digits(h.t) + ",A=" + two_digits(h.airlight) + ")";
                              },
                              [](const Rain& r) { return "rain(n=" + std::to_string(r.streaks) + ")"; },
                          },
                          op);
    }
    return out;
}

namespace {

json op_to_json(const Degradation& op) {
    return std::visit(Overload{
                          [](const GaussianNoise& g) { return json{{"kind", "gaussian"}, {"sigma", g.sigma}}; },
                          [](const Haze& h) { return json{{"kind", "haze"}, {"t", h.t}, {"airlight", h.airlight}}; },
                          [](const Rain& r) {
                              return json{{"kind", "rain"},
                                          {"streaks", r.streaks},
                                          {"length", r.length},
                                          {"angle", r.angle},
                                          {"intensity", r.intensity}};
                          },
                      },
                      op);
}

Degradation op_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    auto check_keys = [&](std::initializer_list<const char*> allowed) {
        for (const auto& [k, v] : j.items()) {
            if (k == "kind") continue;
            if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
                throw DegradationError("degradation '" + kind + "': unknown key '" + k + "'");
        }
    };
    if (kind == "gaussian") {
        check_keys({"sigma"});
        return GaussianNoise{j.value("sigma", 25.0)};
    }
    if (kind == "haze") {
        check_keys({"t", "airlight"});
        Haze h;
        h.t = j.value("t", h.t);
        h.airlight = j.value("airlight", h.airlight);
        return h;
    }
    if (kind == "rain") {
        check_keys({"streaks", "length", "angle", "intensity"});
        Rain r;
        r.streaks = j.value("streaks", r.streaks);
        r.length = j.value("length", r.length);
        r.angle = j.value("angle", r.angle);
        r.intensity = j.value("intensity", r.intensity);
        return r;
    }
    throw DegradationError("degradation: unknown kind '" + kind + "'");
}

}  // namespace

json to_json(const DegradationSpec& spec) {
    if (spec.ops.size() == 1) return op_to_json(spec.ops.front());
    json parts = json::array();
    for (const auto& op : spec.ops) parts.push_back(op_to_json(op));
    return {{"kind", "composite"}, {"parts", parts}};
}

DegradationSpec degradation_from_json(const json& j) {
    DegradationSpec spec;
    try {
        if (!j.is_object()) throw DegradationError("degradation: expected a JSON object");
        if (j.at("kind").get<std::string>() == "composite") {
            for (const auto& part : j.at("parts")) {
                if (part.value("kind", "") == "composite") throw DegradationError("degradation: nested composite");
                spec.ops.push_back(op_from_json(part));
            }
        } else {
            spec.ops.push_back(op_from_json(j));
        }
    } catch (const json::exception& e) {
        throw DegradationError(std::string("degradation: ") + e.what());
    }
    spec.validate();
    return spec;
}

Tensor degrade(const Tensor& x, const DegradationSpec& spec, Rng& rng) {
    check_image(x);
    spec.validate();
    Tensor y = x;
    for (const auto& op : spec.ops) std::visit([&](const auto& o) { apply(y, o, rng); }, op);
    return y;
}

Tensor procedural_image(std::int64_t height, std::int64_t width, Rng& rng) {
    if (height < 1 || width < 1) throw ShapeError("procedural_image: size must be positive");
    Tensor img({1, 3, height, width});
    const std::int64_t plane = height * width;
    auto color = [&] { return std::array<double, 3>{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; };

    // Linear gradient background.
    const auto c0 = color(), c1 = color();
    const double ga = rng.uniform(0.0, 2.0 * kPi);
    const double gx = std::cos(ga), gy = std::sin(ga);
    const double span = std::abs(gx) * width + std::abs(gy) * height;
    for (std::int64_t y = 0; y < height; ++y)
        for (std::int64_t x = 0; x < width; ++x) {
            double f = (gx * x + gy * y) / span;
            f = f - std::floor(f);
            for (int c = 0; c < 3; ++c) img[c * plane + y * width + x] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * f);
        }

    // Flat shapes: rectangles and ellipses, optionally striped.
    const int shapes = 3 + static_cast<int>(rng.below(5));
    for (int s = 0; s < shapes; ++s) {
        const auto col = color();
        const bool ellipse = rng.coin();
        const double cx = rng.uniform(0.0, static_cast<double>(width));
        const double cy = rng.uniform(0.0, static_cast<double>(height));
        const double rx = rng.uniform(0.08, 0.35) * width, ry = rng.uniform(0.08, 0.35) * height;
        const bool striped = rng.uniform() < 0.3;
        const double period = rng.uniform(3.0, 8.0), phase = rng.uniform(0.0, 2.0 * kPi);
        for (std::int64_t y = 0; y < height; ++y)
            for (std::int64_t x = 0; x < width; ++x) {
                const double u = (x + 0.5 - cx) / rx, v = (y + 0.5 - cy) / ry;
                const bool inside = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
                if (!inside) continue;
                const double mod = striped ? 0.15 * std::sin(2.0 * kPi * x / period + phase) : 0.0;
                for (int c = 0; c < 3; ++c)
                    img[c * plane + y * width + x] = static_cast<float>(std::clamp(col[c] + mod, 0.0, 1.0));
            }
    }
    return img;
}

namespace {

std::vector<std::filesystem::path> png_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    std::filesystem::directory_iterator it(dir, ec);
    if (ec) throw ImageIoError("cannot read image directory " + dir.string() + ": " + ec.message());
    for (const auto& e : it) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ImageIoError("no PNG files in " + dir.string());
    return files;
}

Tensor crop_image(const Tensor& img, std::int64_t top, std::int64_t left, std::int64_t size) {
    Tensor out({1, 3, size, size});
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t x = 0; x < size; ++x) out.at(0, c, y, x) = img.at(0, c, top + y, left + x);
    return out;
}

}  // namespace

PairSet make_pairs(const PairSource& source, const DegradationSpec& spec, int count, std::int64_t crop,
                   std::uint64_t seed, const std::string& split) {
    if (count < 1) throw DegradationError("make_pairs: count must be >= 1");
    if (crop < 8 || crop % 8 != 0) throw DegradationError("make_pairs: crop " + std::to_string(crop) + " must be a positive multiple of 8");
    spec.validate();
    PairSet set;
    set.spec = spec;
    set.seed = seed;
    set.split = split;
    set.crop = crop;
    const Rng base(seed);
    std::vector<std::filesystem::path> files;
    if (!source.directory.empty()) {
        files = png_files(source.directory);
        set.source = source.directory.string();
    }
    for (int i = 0; i < count; ++i) {
        Rng clean_rng = base.stream("clean", static_cast<std::uint64_t>(i));
        Tensor clean;
        if (files.empty()) {
            clean = procedural_image(crop, crop, clean_rng);
        } else {
            const auto& path = files[static_cast<std::size_t>(i) % files.size()];
            const Tensor img = read_png(path);
            if (img.dim(2) < crop || img.dim(3) < crop) {
                throw ImageIoError(path.string() + ": image " + std::to_string(img.dim(2)) + "x" +
                                   std::to_string(img.dim(3)) + " is smaller than crop " + std::to_string(crop));
            }
            const auto top = static_cast<std::int64_t>(clean_rng.below(static_cast<std::uint64_t>(img.dim(2) - crop + 1)));
            const auto left = static_cast<std::int64_t>(clean_rng.below(static_cast<std::uint64_t>(img.dim(3) - crop + 1)));
            clean = crop_image(img, top, left, crop);
        }
        Rng degrade_rng = base.stream("degrade", static_cast<std::uint64_t>(i));
        Tensor degraded = degrade(clean, spec, degrade_rng);
        set.pairs.push_back({std::move(clean), std::move(degraded)});
    }
    return set;
}

void save_pairs(const PairSet& set, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "clean", ec);
    fs::create_directories(dir / "degraded", ec);
    if (ec) throw ImageIoError("cannot create " + dir.string() + ": " + ec.message());
    json items = json::array();
    for (std::size_t i = 0; i < set.pairs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", i);
        write_png(dir / "clean" / name, set.pairs[i].clean);
        write_png(dir / "degraded" / name, set.pairs[i].degraded);
        items.push_back({{"clean", std::string("clean/") + name}, {"degraded", std::string("degraded/") + name}});
    }
    const json manifest = {{"spec", to_json(set.spec)}, {"seed", set.seed},  {"split", set.split},
                           {"source", set.source},       {"crop", set.crop}, {"count", set.pairs.size()},
                           {"pairs", items}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) throw ImageIoError("cannot write " + (dir / "manifest.json").string());
}

PairSet load_pairs(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ImageIoError("cannot read " + (dir / "manifest.json").string());
    PairSet set;
    try {
        const json m = json::parse(in);
        set.spec = degradation_from_json(m.at("spec"));
        set.seed = m.at("seed").get<std::uint64_t>();
        set.split = m.value("split", "train");
        set.source = m.value("source", "procedural");
        set.crop = m.value("crop", std::int64_t{0});
        for (const auto& item : m.at("pairs")) {
            ImagePair p{read_png(dir / item.at("clean").get<std::string>()),
                        read_png(dir / item.at("degraded").get<std::string>())};
            if (p.clean.shape() != p.degraded.shape()) {
                throw ImageIoError("pair " + item.at("clean").get<std::string>() + " has mismatched shapes");
            }
            set.pairs.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw ImageIoError("bad manifest in " + dir.string() + ": " + e.what());
    }
    if (set.pairs.empty()) throw ImageIoError("manifest in " + dir.string() + " lists no pairs");
    return set;
}

}  // namespace anyir
