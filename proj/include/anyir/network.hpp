#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "anyir/blocks.hpp"
#include "json.hpp"

namespace anyir {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kLevels = 4;

// Encoder level l has width embed_dim * 2^l. Every decoder level l < 3 runs at
// twice the encoder width (the concatenated skip width), so the last decoder
// level and the refinement stage both sit at 2 * embed_dim.
struct ModelConfig {
    int embed_dim = 28;
    std::array<int, kLevels> blocks{3, 5, 5, 7};
    std::array<int, kLevels> heads{1, 2, 4, 8};
    int ffn_expansion = 2;
    int gated_expansion = 2;
    int refinement_blocks = 4;
    SplitRatio split{};
    LambdaPolicy lambda{};
    // Start from the identity mapping (output = input) by zeroing the output
    // conv; otherwise it gets the same fan-in init as every other conv.
    bool zero_init_output = true;
    std::uint64_t seed = 0;

    static ModelConfig tiny();
    static ModelConfig small();
    // CPU-sized: embed_dim 8, one block per level, one refinement block.
    static ModelConfig toy();
    // "tiny", "small" or "toy"; anything else throws ConfigError.
    static ModelConfig preset(const std::string& name);

    std::int64_t level_width(int level) const { return static_cast<std::int64_t>(embed_dim) << level; }

    // Throws ConfigError naming the first violated constraint.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&);
};

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; unknown keys and bad values raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

template <class T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

// Records (probe name, shape) pairs during forward.
using ShapeProbes = std::vector<std::pair<std::string, Shape>>;

template <class T>
class Model {
public:
    static Model build(const ModelConfig& cfg);

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // Deep copy with independent parameter storage.
    Model clone() const;

    const ModelConfig& config() const { return cfg_; }

    // img: [N, 3, H, W] with H, W divisible by 8. Returns img + correction.
    Var<T> forward(const Var<T>& img, ShapeProbes* probes = nullptr) const;
    // Forward without recording.
    BasicTensor<T> infer(const BasicTensor<T>& img) const;

    // All parameter tensors (learnable or not) in a fixed order. The handles
    // share storage with the model.
    std::vector<NamedParam<T>> parameters() const;

    // Replaces the handle of one parameter (shape must match); used to route
    // gradients through an external leaf. Throws std::out_of_range for an
    // unknown name.
    void set_parameter(const std::string& name, Var<T> var);

private:
    Model() = default;
    void visit(const ParamVisitor<T>& f);

    ModelConfig cfg_;
    Var<T> embed_w_, embed_b_;
    std::array<std::vector<DABParams<T>>, kLevels> encoder_;
    std::array<Var<T>, kLevels - 1> down_;
    std::array<Var<T>, kLevels - 1> up_;
    std::array<Var<T>, kLevels - 1> skip_;
    std::array<std::vector<DABParams<T>>, kLevels - 1> decoder_;
    std::vector<DABParams<T>> refine_;
    Var<T> out_w_, out_b_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// Number of learnable scalars (a fixed fusion weight does not count).
template <class T>
std::int64_t count_params(const Model<T>& m);

// Learnable scalars grouped by top-level module (patch_embed, encoder0, ...,
// down0, ..., up2, skip2, decoder2, ..., refine, output), in forward order.
template <class T>
std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const Model<T>& m);

// ---- checkpoints --------------------------------------------------------------
//
// Layout: "ANYIR1" | u64 LE header length | JSON header | float32 LE payload.
// The header holds format_version, config, step, rng_state and a tensor
// manifest [{name, shape, offset}] with byte offsets relative to the payload.

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, bad_magic, version, truncated, corrupt_header, shape_mismatch };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct CheckpointMeta {
    std::int64_t step = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

void save_checkpoint(const ModelF& m, const std::filesystem::path& path, const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
    ModelF model;
    CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Loads parameter values into an existing model; every manifest entry must
// match a parameter of the same name and shape.
CheckpointMeta load_checkpoint_into(ModelF& m, const std::filesystem::path& path);

// Upper bound on the header size used by the size contract:
// file bytes <= 6 + 8 + 4 * stored scalars + checkpoint_header_bound(#tensors).
std::int64_t checkpoint_header_bound(std::int64_t tensor_count);

}  // namespace anyir
