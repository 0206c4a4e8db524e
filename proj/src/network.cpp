#include "anyir/network.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "anyir/ops.hpp"

namespace anyir {

using nlohmann::json;

// ---- config -----------------------------------------------------------------

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::small() {
    ModelConfig c;
    c.embed_dim = 32;
    c.blocks = {4, 6, 6, 8};
    return c;
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.embed_dim = 8;
    c.blocks = {1, 1, 1, 1};
    c.refinement_blocks = 1;
    return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "small") return small();
    if (name == "toy") return toy();
    throw ConfigError("unknown preset '" + name + "' (expected tiny, small or toy)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (embed_dim < 2 || embed_dim % 2 != 0) fail("embed_dim must be even and >= 2, got " + std::to_string(embed_dim));
    for (int l = 0; l < kLevels; ++l) {
        if (blocks[l] < 1) fail("blocks[" + std::to_string(l) + "] must be >= 1");
        if (heads[l] < 1) fail("heads[" + std::to_string(l) + "] must be >= 1");
        // Attention runs on half the block width: w/2 on encoder level l and
        // w on decoder level l (which is twice as wide).
        const std::int64_t branch = level_width(l) / 2;
        if (branch % heads[l] != 0) {
            fail("heads[" + std::to_string(l) + "] = " + std::to_string(heads[l]) +
                 " does not divide the attention width " + std::to_string(branch) + " of level " + std::to_string(l));
        }
    }
    if (ffn_expansion < 1) fail("ffn_expansion must be >= 1");
    if (gated_expansion < 1) fail("gated_expansion must be >= 1");
    if (refinement_blocks < 1) fail("refinement_blocks must be >= 1");
    if (!std::isfinite(lambda.value)) fail("lambda value must be finite");
    try {
        for (int l = 0; l < kLevels; ++l) {
            GatedDAShape::make(level_width(l) / 2, gated_expansion, split);
            GatedDAShape::make(level_width(l), gated_expansion, split);
        }
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return to_json(a) == to_json(b);
}

json to_json(const ModelConfig& c) {
    return json{{"embed_dim", c.embed_dim},
                {"blocks", c.blocks},
                {"heads", c.heads},
                {"ffn_expansion", c.ffn_expansion},
                {"gated_expansion", c.gated_expansion},
                {"refinement_blocks", c.refinement_blocks},
                {"split_ratio", {c.split.alpha, c.split.beta, c.split.gamma}},
                {"lambda_mode", c.lambda.mode == LambdaMode::fixed ? "fixed" : "learnable"},
                {"lambda", c.lambda.value},
                {"zero_init_output", c.zero_init_output},
                {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
    ModelConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "embed_dim") c.embed_dim = v.get<int>();
            else if (key == "blocks") c.blocks = v.get<std::array<int, kLevels>>();
            else if (key == "heads") c.heads = v.get<std::array<int, kLevels>>();
            else if (key == "ffn_expansion") c.ffn_expansion = v.get<int>();
            else if (key == "gated_expansion") c.gated_expansion = v.get<int>();
            else if (key == "refinement_blocks") c.refinement_blocks = v.get<int>();
            else if (key == "split_ratio") {
                const auto r = v.get<std::array<double, 3>>();
                c.split = {r[0], r[1], r[2]};
            } else if (key == "lambda_mode") {
                const auto m = v.get<std::string>();
                if (m == "fixed") c.lambda.mode = LambdaMode::fixed;
                else if (m == "learnable") c.lambda.mode = LambdaMode::learnable;
                else throw ConfigError("model config: lambda_mode must be fixed or learnable, got '" + m + "'");
            } else if (key == "lambda") c.lambda.value = v.get<double>();
            else if (key == "zero_init_output") c.zero_init_output = v.get<bool>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("model config: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- model --------------------------------------------------------------------

namespace {

std::string level_name(const char* stem, int l) { return stem + std::to_string(l); }

template <class T>
Var<T> run_blocks(const std::vector<DABParams<T>>& blocks, Var<T> x) {
    for (const auto& b : blocks) x = dab_forward(x, b);
    return x;
}

void probe(ShapeProbes* probes, std::string name, const Shape& s) {
    if (probes) probes->emplace_back(std::move(name), s);
}

// Internal shape contract; a violation is a bug, not bad input.
void expect_shape(const Shape& got, const Shape& want, const std::string& where) {
    if (got != want) {
        throw std::logic_error("shape probe " + where + ": got " + to_string(got) + ", expected " + to_string(want));
    }
}

}  // namespace

template <class T>
Model<T> Model<T>::build(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    Rng rng = Rng(cfg.seed).stream("init");
    auto opts = [&](int heads) {
        DABOptions o;
        o.heads = heads;
        o.ffn_expansion = cfg.ffn_expansion;
        o.gated_expansion = cfg.gated_expansion;
        o.split = cfg.split;
        o.lambda = cfg.lambda;
        return o;
    };
    const std::int64_t c = cfg.embed_dim;
    m.embed_w_ = init_conv_weight<T>({c, 3, 3, 3}, rng);
    m.embed_b_ = Var<T>::leaf(BasicTensor<T>({c}), true);
    for (int l = 0; l < kLevels; ++l) {
        const std::int64_t w = cfg.level_width(l);
        for (int i = 0; i < cfg.blocks[l]; ++i) m.encoder_[l].push_back(DABParams<T>::init(w, opts(cfg.heads[l]), rng));
        if (l < kLevels - 1) m.down_[l] = init_conv_weight<T>({2 * w, 4 * w, 1, 1}, rng);
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        const std::int64_t w = cfg.level_width(l);
        const std::int64_t in = l == kLevels - 2 ? cfg.level_width(kLevels - 1) : 2 * cfg.level_width(l + 1);
        m.up_[l] = init_conv_weight<T>({4 * w, in, 1, 1}, rng);
        m.skip_[l] = init_conv_weight<T>({2 * w, 2 * w, 1, 1}, rng);
        for (int i = 0; i < cfg.blocks[l]; ++i)
            m.decoder_[l].push_back(DABParams<T>::init(2 * w, opts(cfg.heads[l]), rng));
    }
    for (int i = 0; i < cfg.refinement_blocks; ++i) m.refine_.push_back(DABParams<T>::init(2 * c, opts(cfg.heads[0]), rng));
    m.out_w_ = init_conv_weight<T>({3, 2 * c, 3, 3}, rng);
    if (cfg.zero_init_output) m.out_w_.mutable_value() = BasicTensor<T>(m.out_w_.shape());
    m.out_b_ = Var<T>::leaf(BasicTensor<T>({3}), true);
    return m;
}

template <class T>
void Model<T>::visit(const ParamVisitor<T>& f) {
    f("patch_embed.weight", embed_w_);
    f("patch_embed.bias", embed_b_);
    for (int l = 0; l < kLevels; ++l) {
        for (std::size_t i = 0; i < encoder_[l].size(); ++i)
            encoder_[l][i].visit(level_name("encoder", l) + ".block" + std::to_string(i), f);
        if (l < kLevels - 1) f(level_name("down", l) + ".weight", down_[l]);
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        f(level_name("up", l) + ".weight", up_[l]);
        f(level_name("skip", l) + ".weight", skip_[l]);
        for (std::size_t i = 0; i < decoder_[l].size(); ++i)
            decoder_[l][i].visit(level_name("decoder", l) + ".block" + std::to_string(i), f);
    }
    for (std::size_t i = 0; i < refine_.size(); ++i) refine_[i].visit("refine.block" + std::to_string(i), f);
    f("output.weight", out_w_);
    f("output.bias", out_b_);
}

template <class T>
std::vector<NamedParam<T>> Model<T>::parameters() const {
    std::vector<NamedParam<T>> out;
    const_cast<Model*>(this)->visit([&](const std::string& name, Var<T>& v) { out.push_back({name, v}); });
    return out;
}

template <class T>
void Model<T>::set_parameter(const std::string& name, Var<T> var) {
    bool found = false;
    visit([&](const std::string& n, Var<T>& v) {
        if (n != name) return;
        if (var.shape() != v.shape()) {
            throw ShapeError("set_parameter: '" + name + "' has shape " + to_string(v.shape()) + ", got " +
                             to_string(var.shape()));
        }
        v = var;
        found = true;
    });
    if (!found) throw std::out_of_range("set_parameter: no parameter named '" + name + "'");
}

template <class T>
Model<T> Model<T>::clone() const {
    Model m;
    m.cfg_ = cfg_;
    m.embed_w_ = embed_w_;
    m.embed_b_ = embed_b_;
    m.encoder_ = encoder_;
    m.down_ = down_;
    m.up_ = up_;
    m.skip_ = skip_;
    m.decoder_ = decoder_;
    m.refine_ = refine_;
    m.out_w_ = out_w_;
    m.out_b_ = out_b_;
    // The copies above share nodes; give every parameter its own.
    m.visit([](const std::string&, Var<T>& v) { v = Var<T>::leaf(v.value(), v.requires_grad()); });
    return m;
}

template <class T>
Var<T> Model<T>::forward(const Var<T>& img, ShapeProbes* probes) const {
    const Shape& s = img.shape();
    if (s.size() != 4 || s[1] != 3) {
        throw ShapeError("forward: expected an image batch [N,3,H,W], got " + to_string(s));
    }
    const std::int64_t n = s[0], h = s[2], w = s[3];
    for (auto [extent, axis] : {std::pair{h, "height"}, std::pair{w, "width"}}) {
        if (extent % 8 != 0) {
            const std::int64_t pad = (8 - extent % 8) % 8;
            throw ShapeError(std::string("forward: ") + axis + " " + std::to_string(extent) +
                             " is not divisible by 8; pad by " + std::to_string(pad) + " to " +
                             std::to_string(extent + pad));
        }
    }
    auto level_shape = [&](std::int64_t width, int l) { return Shape{n, width, h >> l, w >> l}; };

    Var<T> x = conv2d(img, embed_w_, std::optional<Var<T>>(embed_b_), {1, 1, 1});
    std::array<Var<T>, kLevels - 1> skips;
    for (int l = 0; l < kLevels; ++l) {
        x = run_blocks(encoder_[l], x);
        expect_shape(x.shape(), level_shape(cfg_.level_width(l), l), level_name("encoder", l));
        probe(probes, level_name("encoder", l), x.shape());
        if (l < kLevels - 1) {
            skips[l] = x;
            x = conv2d(pixel_unshuffle(x, 2), down_[l]);
        }
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        x = pixel_shuffle(conv2d(x, up_[l]), 2);
        x = conv2d(concat_channels<T>({x, skips[l]}), skip_[l]);
        x = run_blocks(decoder_[l], x);
        expect_shape(x.shape(), level_shape(2 * cfg_.level_width(l), l), level_name("decoder", l));
        probe(probes, level_name("decoder", l), x.shape());
    }
    x = run_blocks(refine_, x);
    probe(probes, "refine", x.shape());
    Var<T> out = add(conv2d(x, out_w_, std::optional<Var<T>>(out_b_), {1, 1, 1}), img);
    probe(probes, "output", out.shape());
    return out;
}

template <class T>
BasicTensor<T> Model<T>::infer(const BasicTensor<T>& img) const {
    return forward(Var<T>::leaf(img)).value();
}

template <class T>
std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const Model<T>& m) {
    std::vector<std::pair<std::string, std::int64_t>> out;
    for (const auto& p : m.parameters()) {
        if (!p.var.requires_grad()) continue;
        const std::string group = p.name.substr(0, p.name.find('.'));
        if (out.empty() || out.back().first != group) out.emplace_back(group, 0);
        out.back().second += p.var.value().numel();
    }
    return out;
}

template <class T>
std::int64_t count_params(const Model<T>& m) {
    std::int64_t total = 0;
    for (const auto& [name, count] : param_breakdown(m)) total += count;
    return total;
}

template class Model<float>;
template class Model<double>;
template std::int64_t count_params(const Model<float>&);
template std::int64_t count_params(const Model<double>&);
template std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const Model<float>&);
template std::vector<std::pair<std::string, std::int64_t>> param_breakdown(const Model<double>&);

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[] = "ANYIR1";
constexpr std::size_t kMagicLen = 6;

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct ParsedCheckpoint {
    json header;
    std::string bytes;
    std::size_t payload_begin = 0;
};

ParsedCheckpoint parse(const std::filesystem::path& path) {
    ParsedCheckpoint pc;
    pc.bytes = read_file(path);
    const std::string& b = pc.bytes;
    using Kind = CheckpointError::Kind;
    if (b.size() < kMagicLen || b.compare(0, 5, kMagic, 5) != 0) {
        throw CheckpointError(Kind::bad_magic, "checkpoint: " + path.string() + " is not an anyir checkpoint (bad magic)");
    }
    if (b[5] != kMagic[5]) {
        throw CheckpointError(Kind::version, "checkpoint: unsupported format version '" + std::string(1, b[5]) +
                                                 "' (this build reads version " + std::to_string(kCheckpointVersion) + ")");
    }
    if (b.size() < kMagicLen + 8) throw CheckpointError(Kind::truncated, "checkpoint: truncated before header length");
    const std::uint64_t hlen = get_u64(reinterpret_cast<const unsigned char*>(b.data() + kMagicLen));
    if (hlen > b.size() - kMagicLen - 8) {
        throw CheckpointError(Kind::truncated, "checkpoint: header length " + std::to_string(hlen) + " exceeds file size");
    }
    try {
        pc.header = json::parse(b.begin() + kMagicLen + 8, b.begin() + static_cast<std::ptrdiff_t>(kMagicLen + 8 + hlen));
    } catch (const json::exception& e) {
        throw CheckpointError(Kind::corrupt_header, std::string("checkpoint: unreadable header: ") + e.what());
    }
    if (!pc.header.is_object() || pc.header.value("format_version", -1) != kCheckpointVersion) {
        throw CheckpointError(Kind::version, "checkpoint: header format_version is not " +
                                                 std::to_string(kCheckpointVersion));
    }
    pc.payload_begin = kMagicLen + 8 + hlen;
    return pc;
}

CheckpointMeta read_meta(const json& h) {
    CheckpointMeta meta;
    try {
        meta.step = h.at("step").get<std::int64_t>();
        const auto words = h.at("rng_state").get<std::vector<std::string>>();
        if (words.size() != 4) throw std::invalid_argument("rng_state needs 4 words");
        for (int i = 0; i < 4; ++i) meta.rng_state[i] = std::stoull(words[i], nullptr, 16);
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt_header, std::string("checkpoint: bad meta: ") + e.what());
    }
    return meta;
}

void fill_params(ModelF& m, const ParsedCheckpoint& pc) {
    using Kind = CheckpointError::Kind;
    std::map<std::string, Var<float>> by_name;
    for (auto& p : m.parameters()) by_name.emplace(p.name, p.var);
    const json* manifest = nullptr;
    try {
        manifest = &pc.header.at("tensors");
    } catch (const json::exception&) {
        throw CheckpointError(Kind::corrupt_header, "checkpoint: header has no tensor manifest");
    }
    if (manifest->size() != by_name.size()) {
        throw CheckpointError(Kind::shape_mismatch, "checkpoint: manifest lists " + std::to_string(manifest->size()) +
                                                        " tensors, model has " + std::to_string(by_name.size()));
    }
    const std::size_t payload = pc.bytes.size() - pc.payload_begin;
    for (const auto& entry : *manifest) {
        std::string name;
        Shape shape;
        std::uint64_t offset = 0;
        try {
            name = entry.at("name").get<std::string>();
            shape = entry.at("shape").get<Shape>();
            offset = entry.at("offset").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw CheckpointError(Kind::corrupt_header, std::string("checkpoint: bad manifest entry: ") + e.what());
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError(Kind::shape_mismatch, "checkpoint: unknown tensor '" + name + "'");
        Var<float>& v = it->second;
        if (shape != v.shape()) {
            throw CheckpointError(Kind::shape_mismatch, "checkpoint: tensor '" + name + "' has shape " + to_string(shape) +
                                                            ", model expects " + to_string(v.shape()));
        }
        const std::uint64_t bytes = static_cast<std::uint64_t>(v.value().numel()) * 4;
        if (offset > payload || bytes > payload - offset) {
            throw CheckpointError(Kind::truncated, "checkpoint: payload of '" + name + "' is truncated");
        }
        const auto* src = reinterpret_cast<const unsigned char*>(pc.bytes.data() + pc.payload_begin + offset);
        float* dst = v.mutable_value().raw();
        for (std::int64_t i = 0; i < v.value().numel(); ++i) {
            std::uint32_t u = 0;
            for (int k = 3; k >= 0; --k) u = (u << 8) | src[4 * i + k];
            std::memcpy(dst + i, &u, 4);
        }
    }
}

}  // namespace

void save_checkpoint(const ModelF& m, const std::filesystem::path& path, const CheckpointMeta& meta) {
    json manifest = json::array();
    std::string payload;
    for (const auto& p : m.parameters()) {
        manifest.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"offset", payload.size()}});
        for (float f : p.var.value().data()) {
            std::uint32_t u = 0;
            std::memcpy(&u, &f, 4);
            for (int k = 0; k < 4; ++k) payload.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
        }
    }
    json rng = json::array();
    for (auto word : meta.rng_state) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(word));
        rng.push_back(buf);
    }
    const json header = {{"format_version", kCheckpointVersion},
                         {"config", to_json(m.config())},
                         {"step", meta.step},
                         {"rng_state", rng},
                         {"tensors", manifest}};
    const std::string hs = header.dump();
    std::string out(kMagic, kMagicLen);
    put_u64(out, hs.size());
    out += hs;
    out += payload;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const ParsedCheckpoint pc = parse(path);
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(pc.header.at("config"));
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::corrupt_header, std::string("checkpoint: bad config: ") + e.what());
    }
    LoadedCheckpoint out{ModelF::build(cfg), read_meta(pc.header)};
    fill_params(out.model, pc);
    return out;
}

CheckpointMeta load_checkpoint_into(ModelF& m, const std::filesystem::path& path) {
    const ParsedCheckpoint pc = parse(path);
    fill_params(m, pc);
    return read_meta(pc.header);
}

std::int64_t checkpoint_header_bound(std::int64_t tensor_count) { return 1024 + 160 * tensor_count; }

}  // namespace anyir
