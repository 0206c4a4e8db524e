#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "anyir/rng.hpp"
#include "anyir/tensor.hpp"
#include "json.hpp"

// Synthetic corruption operators y = D(x) on [1,3,H,W] images in [0,1] and
// toy pair generation.
namespace anyir {

class DegradationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// y = clamp(x + n), n ~ N(0, (sigma/255)^2).
struct GaussianNoise {
    double sigma = 25.0;  // on the 0..255 scale
};

// y = x * t + A * (1 - t) with a spatially uniform transmission t.
struct Haze {
    double t = 0.6;
    double airlight = 0.85;
};

// Additive bright line segments, then clamp.
struct Rain {
    int streaks = 40;
    double length = 10.0;      // pixels
    double angle = 75.0;       // degrees from the x axis
    double intensity = 0.35;   // added per covered pixel
};

using Degradation = std::variant<GaussianNoise, Haze, Rain>;

// One operator, or several applied in order (composite).
struct DegradationSpec {
    std::vector<Degradation> ops;

    static DegradationSpec gaussian(double sigma) { return {{GaussianNoise{sigma}}}; }
    static DegradationSpec haze(double t, double airlight) { return {{Haze{t, airlight}}}; }
    static DegradationSpec rain(const Rain& r) { return {{r}}; }

    // Throws DegradationError on an empty list or out-of-range parameters.
    void validate() const;
    std::string describe() const;
};

nlohmann::json to_json(const DegradationSpec& spec);
// Accepts {"kind": "gaussian"|"haze"|"rain", ...} or
// {"kind": "composite", "parts": [...]}.
DegradationSpec degradation_from_json(const nlohmann::json& j);

// Applies the operators in order, drawing randomness from `rng` sequentially.
Tensor degrade(const Tensor& x, const DegradationSpec& spec, Rng& rng);

// Seeded smooth gradients, shapes and stripes; [1,3,H,W] in [0,1].
Tensor procedural_image(std::int64_t height, std::int64_t width, Rng& rng);

struct ImagePair {
    Tensor clean;
    Tensor degraded;
};

struct PairSet {
    std::vector<ImagePair> pairs;
    DegradationSpec spec;
    std::uint64_t seed = 0;
    std::string split = "train";
    std::string source = "procedural";
    std::int64_t crop = 0;
};

struct PairSource {
    // Empty: procedural images. Otherwise a directory of PNG files; crops
    // are cut from the files in name order, cycling as needed.
    std::filesystem::path directory;
};

// Item i uses child streams ("clean", i) and ("degrade", i) of Rng(seed), so
// the set is reproducible and items are independent.
PairSet make_pairs(const PairSource& source, const DegradationSpec& spec, int count, std::int64_t crop,
                   std::uint64_t seed, const std::string& split = "train");

// Writes clean/NNNN.png, degraded/NNNN.png and manifest.json under `dir`.
void save_pairs(const PairSet& set, const std::filesystem::path& dir);
// Reads a directory written by save_pairs.
PairSet load_pairs(const std::filesystem::path& dir);

}  // namespace anyir
