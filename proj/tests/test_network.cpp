#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "anyir/gradcheck.hpp"
#include "anyir/network.hpp"
#include "anyir/ops.hpp"

using namespace anyir;
namespace fs = std::filesystem;

namespace {

ModelConfig minimal_config(std::uint64_t seed = 1234) {
    ModelConfig c;
    c.zero_init_output = false;
    c.embed_dim = 4;
    c.blocks = {1, 1, 1, 1};
    c.refinement_blocks = 1;
    c.seed = seed;
    return c;
}

template <class T>
BasicTensor<T> random_image(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    BasicTensor<T> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform());
    return t;
}

// Closed-form learnable-parameter count of one block at width w.
std::int64_t dab_count(std::int64_t w, std::int64_t heads, std::int64_t e_ffn, std::int64_t e_gate) {
    const std::int64_t c = w / 2, hidden = e_gate * c;
    const std::int64_t attention = 4 * c * c + 3 * 9 * c + heads;
    const std::int64_t gated = c + hidden * c + 9 * (hidden / 4) + c * (hidden / 2) + c * c + 1;
    const std::int64_t fusion = 1 + w * w;
    const std::int64_t ffn = w + 2 * e_ffn * w * w;
    return w + attention + gated + fusion + ffn;
}

std::int64_t model_count(const ModelConfig& cfg) {
    const std::int64_t c = cfg.embed_dim;
    std::int64_t total = 27 * c + c + 3 * 2 * c * 9 + 3;
    for (int l = 0; l < 4; ++l) {
        const std::int64_t w = c << l;
        total += cfg.blocks[l] * dab_count(w, cfg.heads[l], cfg.ffn_expansion, cfg.gated_expansion);
        if (l < 3) {
            total += 8 * w * w;                                   // down
            total += 4 * w * (l == 2 ? 8 * c : 4 * w);            // up (input is 2 * w_{l+1} or the latent)
            total += 4 * w * w;                                   // skip projection
            total += cfg.blocks[l] * dab_count(2 * w, cfg.heads[l], cfg.ffn_expansion, cfg.gated_expansion);
        }
    }
    return total + cfg.refinement_blocks * dab_count(2 * c, cfg.heads[0], cfg.ffn_expansion, cfg.gated_expansion);
}

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("anyir_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("presets land within 10% of the published parameter budgets") {
    const auto tiny = ModelF::build(ModelConfig::tiny());
    const auto small = ModelF::build(ModelConfig::small());
    const std::int64_t nt = count_params(tiny), ns = count_params(small);
    CHECK(nt == model_count(ModelConfig::tiny()));
    CHECK(ns == model_count(ModelConfig::small()));
    CHECK(std::abs(nt / 5.74e6 - 1.0) <= 0.10);
    CHECK(std::abs(ns / 8.51e6 - 1.0) <= 0.10);
}

TEST_CASE("parameter breakdown arithmetic and seed independence") {
    const auto m = ModelF::build(minimal_config());
    const auto parts = param_breakdown(m);
    REQUIRE(parts.front().first == "patch_embed");
    CHECK(parts.front().second == 3 * 4 * 9 + 4);
    bool saw_down0 = false;
    for (const auto& [name, count] : parts) {
        if (name == "down0") {
            // One bias-free 1x1 conv from 16 to 8 channels.
            CHECK(count == 128);
            saw_down0 = true;
        }
    }
    CHECK(saw_down0);
    CHECK(parts.back().first == "output");
    CHECK(count_params(m) == model_count(minimal_config()));
    CHECK(count_params(ModelF::build(minimal_config(99))) == count_params(m));

    ModelConfig fixed = minimal_config();
    fixed.lambda = {LambdaMode::fixed, 0.5};
    // 8 blocks (4 encoder, 3 decoder, 1 refinement), one fusion weight each.
    CHECK(count_params(ModelF::build(fixed)) == count_params(m) - 8);
}

TEST_CASE("build is deterministic in the seed") {
    const auto a = ModelF::build(minimal_config(5));
    const auto b = ModelF::build(minimal_config(5));
    const auto c = ModelF::build(minimal_config(6));
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(bitwise_equal(pa[i].var.value(), pb[i].var.value()));
        any_diff = any_diff || !bitwise_equal(pa[i].var.value(), pc[i].var.value());
    }
    CHECK(any_diff);
    for (const auto& p : pa) {
        if (p.name.ends_with("norm_gain") || p.name.ends_with("tau") || p.name.ends_with("temperature")) {
            for (float v : p.var.value().data()) CHECK(v == 1.0f);
        } else if (p.name.ends_with("lambda")) {
            CHECK(p.var.value()[0] == 0.5f);
        } else if (p.name.ends_with("bias")) {
            for (float v : p.var.value().data()) CHECK(v == 0.0f);
        }
    }
}

TEST_CASE("invalid configs are rejected with a diagnostic") {
    ModelConfig c = minimal_config();
    c.embed_dim = 5;
    CHECK_THROWS_AS(ModelF::build(c), ConfigError);
    c = minimal_config();
    c.blocks[2] = 0;
    CHECK_THROWS_AS(ModelF::build(c), ConfigError);
    c = minimal_config();
    c.heads[0] = 3;
    CHECK_THROWS_WITH_AS(ModelF::build(c), doctest::Contains("heads[0]"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"embed_dims", 4}}), ConfigError);
}

TEST_CASE("config survives a JSON round trip") {
    ModelConfig c = ModelConfig::small();
    c.lambda = {LambdaMode::fixed, 0.25};
    c.seed = 77;
    CHECK(model_config_from_json(to_json(c)) == c);
}

TEST_CASE("forward preserves shape and reports per-level probes") {
    const auto m = ModelF::build(minimal_config());
    for (std::int64_t n : {1, 2}) {
        for (std::int64_t s : {16, 32}) {
            ShapeProbes probes;
            const Var<float> out = m.forward(Var<float>::leaf(random_image<float>({n, 3, s, s}, 3)), &probes);
            CHECK(out.shape() == Shape{n, 3, s, s});
            CHECK(out.value().all_finite());
            REQUIRE(probes.size() == 9);
            for (int l = 0; l < 4; ++l) {
                CHECK(probes[l].first == "encoder" + std::to_string(l));
                CHECK(probes[l].second == Shape{n, 4 << l, s >> l, s >> l});
            }
            CHECK(probes[6].second == Shape{n, 8, s, s});  // decoder0
        }
    }
    CHECK_THROWS_WITH_AS(m.forward(Var<float>::leaf(Tensor({1, 3, 20, 16}))), doctest::Contains("pad by 4"), ShapeError);
    CHECK_THROWS_AS(m.forward(Var<float>::leaf(Tensor({1, 1, 16, 16}))), ShapeError);
}

TEST_CASE("the default zero-initialized output conv starts from the identity") {
    ModelConfig cfg = minimal_config(3);
    cfg.zero_init_output = true;
    const auto m = ModelF::build(cfg);
    const Tensor img = random_image<float>({1, 3, 16, 16}, 5);
    CHECK(bitwise_equal(m.infer(img), img));
    CHECK(ModelConfig{}.zero_init_output);
}

TEST_CASE("a zero output conv makes the network the identity") {
    auto m = ModelF::build(minimal_config());
    for (auto& p : m.parameters()) {
        if (p.name.starts_with("output.")) p.var.mutable_value() = Tensor(p.var.shape());
    }
    const Tensor img = random_image<float>({2, 3, 16, 16}, 4);
    CHECK(bitwise_equal(m.infer(img), img));
}

TEST_CASE("clone is deep") {
    auto m = ModelF::build(minimal_config());
    auto c = m.clone();
    const Tensor img = random_image<float>({1, 3, 16, 16}, 8);
    CHECK(bitwise_equal(m.infer(img), c.infer(img)));
    c.parameters()[0].var.mutable_value()[0] += 1.0f;
    CHECK_FALSE(bitwise_equal(m.infer(img), c.infer(img)));
}

TEST_CASE("end-to-end L1 gradient w.r.t. the patch embedding passes central differences") {
    auto model = ModelD::build(minimal_config(21));
    const TensorD img = random_image<double>({1, 3, 16, 16}, 22);
    const TensorD target = random_image<double>({1, 3, 16, 16}, 23);
    TensorD weight;
    for (const auto& p : model.parameters())
        if (p.name == "patch_embed.weight") weight = p.var.value();
    DiffFn fn = [&](const std::vector<VarD>& in) {
        model.set_parameter("patch_embed.weight", in[0]);
        return mean_all(abs(sub(model.forward(VarD::leaf(img)), VarD::leaf(target))));
    };
    const auto r = grad_check(fn, {weight}, 1e-6, 9);
    INFO("max rel error " << r.max_rel_error);
    CHECK(r.max_rel_error <= 1e-3);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const auto m = ModelF::build(minimal_config(31));
    const fs::path path = temp_path("roundtrip.ckpt");
    save_checkpoint(m, path, {42, {1, 2, 3, 0xffffffffffffffffULL}});
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.meta.step == 42);
    CHECK(loaded.meta.rng_state[3] == 0xffffffffffffffffULL);
    CHECK(loaded.model.config() == m.config());
    const Tensor img = random_image<float>({1, 3, 16, 16}, 9);
    CHECK(bitwise_equal(loaded.model.infer(img), m.infer(img)));

    const auto pm = m.parameters();
    std::int64_t stored = 0;
    for (const auto& p : pm) stored += p.var.value().numel();
    CHECK(stored == count_params(m));
    const auto size = static_cast<std::int64_t>(fs::file_size(path));
    CHECK(size <= 6 + 8 + 4 * count_params(m) + checkpoint_header_bound(static_cast<std::int64_t>(pm.size())));
    fs::remove(path);
}

TEST_CASE("damaged checkpoints give distinct diagnostics") {
    const auto m = ModelF::build(minimal_config(32));
    const fs::path path = temp_path("damaged.ckpt");
    save_checkpoint(m, path);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    auto kind_of = [&]() {
        try {
            load_checkpoint(path);
        } catch (const CheckpointError& e) {
            return e.kind();
        }
        return CheckpointError::Kind::io;
    };

    std::string b = bytes;
    b[0] = 'X';
    write(b);
    CHECK(kind_of() == CheckpointError::Kind::bad_magic);

    b = bytes;
    b[5] = '2';
    write(b);
    CHECK(kind_of() == CheckpointError::Kind::version);

    write(bytes.substr(0, bytes.size() - 10));
    CHECK(kind_of() == CheckpointError::Kind::truncated);

    write(bytes.substr(0, 20));
    CHECK(kind_of() == CheckpointError::Kind::truncated);

    b = bytes;
    b[14] = '#';
    write(b);
    CHECK(kind_of() == CheckpointError::Kind::corrupt_header);

    write(bytes);
    ModelConfig other = minimal_config();
    other.embed_dim = 8;
    auto wrong = ModelF::build(other);
    try {
        load_checkpoint_into(wrong, path);
        FAIL("expected a shape mismatch");
    } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::shape_mismatch);
    }
    fs::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}

TEST_CASE("minimal model output matches the recorded golden values") {
    ModelConfig cfg = minimal_config(2024);
    const auto m = ModelF::build(cfg);
    const Tensor out = m.infer(random_image<float>({1, 3, 16, 16}, 2025));
    const fs::path golden = fs::path(ANYIR_TEST_DATA_DIR) / "golden_minimal_forward.json";

    if (std::getenv("ANYIR_WRITE_GOLDEN")) {
        nlohmann::json j;
        j["config"] = to_json(cfg);
        j["values"] = std::vector<float>(out.data().begin(), out.data().end());
        std::ofstream(golden) << j.dump(1) << "\n";
    }
    std::ifstream in(golden);
    REQUIRE_MESSAGE(in.good(), "missing golden file " << golden.string());
    const auto j = nlohmann::json::parse(in);
    const auto want = j.at("values").get<std::vector<double>>();
    REQUIRE(static_cast<std::int64_t>(want.size()) == out.numel());
    double worst = 0.0;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(out[i]) - want[static_cast<std::size_t>(i)]));
    CHECK(worst <= 1e-6);
}
