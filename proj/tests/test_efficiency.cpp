#include "doctest.h"

#include <cmath>

#include "anyir/efficiency.hpp"
#include "oracles.hpp"

using namespace anyir;

namespace {

ModelConfig minimal_config() {
    ModelConfig c;
    c.embed_dim = 4;
    c.blocks = {1, 1, 1, 1};
    c.refinement_blocks = 1;
    return c;
}

Tensor random_image(Shape s, Rng& rng, double scale = 255.0) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform() * scale);
    return t;
}

long double mse_oracle(const Tensor& a, const Tensor& b) {
    long double acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const long double d = static_cast<long double>(a[i]) - static_cast<long double>(b[i]);
        acc += d * d;
    }
    return acc / a.numel();
}

}  // namespace

TEST_CASE("a 1x1 conv 16 -> 8 on a 4x4 map costs 2048 MACs") {
    // down0 of the minimal model at input 8x8 is exactly that conv.
    const CostReport r = count_flops(minimal_config(), 8, 8);
    bool found = false;
    for (const auto& m : r.modules) {
        if (m.name == "down0") {
            CHECK(m.conv_macs == 8.0 * 16.0 * 16.0);
            CHECK(m.params == 128);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("report totals are the sum of their parts and match the built model's parameter count") {
    for (const auto& cfg : {minimal_config(), ModelConfig::tiny(), ModelConfig::small()}) {
        const CostReport r = count_flops(cfg, 64, 48);
        double sum = 0;
        for (const auto& m : r.modules) sum += m.macs();
        CHECK(r.total_macs() == doctest::Approx(sum).epsilon(1e-12));
        CHECK(r.total_flops() == 2.0 * r.total_macs());
        CHECK(r.params() == count_params(ModelF::build(cfg)));
    }
    ModelConfig fixed = minimal_config();
    fixed.lambda = {LambdaMode::fixed, 0.5};
    CHECK(count_flops(fixed, 16, 16).params() == count_params(ModelF::build(fixed)));
}

TEST_CASE("conv MACs scale by exactly four when both sides double") {
    const auto a = count_flops(ModelConfig::tiny(), 64, 64);
    const auto b = count_flops(ModelConfig::tiny(), 128, 128);
    CHECK(b.conv_macs() == 4.0 * a.conv_macs());
    CHECK(b.attention_macs() == 4.0 * a.attention_macs());
    CHECK(b.total_macs() > a.total_macs());
    CHECK_THROWS_AS(count_flops(ModelConfig::tiny(), 100, 64), ShapeError);
}

TEST_CASE("tiny at 224 is within 25% of 26G and small costs more") {
    const auto tiny = count_flops(ModelConfig::tiny(), 224, 224);
    const auto small = count_flops(ModelConfig::small(), 224, 224);
    const double mac_err = std::abs(tiny.total_macs() / 26e9 - 1.0);
    const double flop_err = std::abs(tiny.total_flops() / 26e9 - 1.0);
    CHECK(std::min(mac_err, flop_err) <= 0.25);
    CHECK(small.total_macs() > tiny.total_macs());
    const auto j = tiny.to_json();
    CHECK(j.at("total_flops").get<double>() == tiny.total_flops());
    CHECK(tiny.to_table().find("total") != std::string::npos);
}

TEST_CASE("psnr closed forms and scalar oracle") {
    const Tensor a = Tensor::full({1, 3, 8, 8}, 100.0f);
    const Tensor b = Tensor::full({1, 3, 8, 8}, 125.5f);
    CHECK(psnr(a, b, 255.0) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(std::isinf(psnr(a, a, 255.0)));
    CHECK(psnr(a, a, 255.0) > 0);

    Rng rng(4);
    const Tensor x = random_image({2, 3, 9, 7}, rng), y = random_image({2, 3, 9, 7}, rng);
    const double want = static_cast<double>(10.0L * std::log10(255.0L * 255.0L / mse_oracle(x, y)));
    CHECK(std::abs(psnr(x, y, 255.0) - want) <= 1e-6);
    CHECK_THROWS_AS(psnr(x, Tensor({2, 3, 9, 8}), 255.0), ShapeError);
}

TEST_CASE("psnr falls as independent noise grows") {
    Rng rng(5);
    const Tensor clean = random_image({1, 3, 32, 32}, rng, 1.0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        double previous = std::numeric_limits<double>::infinity();
        for (double sigma : {0.01, 0.02, 0.05, 0.1}) {
            Rng noise(seed);
            Tensor noisy = clean;
            for (auto& v : noisy.data()) v += static_cast<float>(sigma * noise.normal());
            const double p = psnr(clean, noisy, 1.0);
            CHECK(p < previous);
            previous = p;
        }
    }
}

TEST_CASE("ssim identities, symmetry and scalar oracle") {
    Rng rng(6);
    const Tensor a = random_image({1, 3, 16, 14}, rng), b = random_image({1, 3, 16, 14}, rng);
    CHECK(ssim(a, a, 255.0) == 1.0);
    CHECK(std::abs(ssim(a, b, 255.0) - ssim(b, a, 255.0)) <= 1e-7);
    CHECK(std::abs(ssim(a, b, 255.0) - static_cast<double>(oracle::ssim(a, b, 255.0L))) <= 1e-5);

    // Negation around the mean flips the covariance sign.
    Tensor pos({1, 1, 12, 12}), neg({1, 1, 12, 12});
    for (std::int64_t i = 0; i < pos.numel(); ++i) {
        const float d = static_cast<float>(rng.uniform(-60.0, 60.0));
        pos[i] = 128.0f + d;
        neg[i] = 128.0f - d;
    }
    CHECK(ssim(pos, neg, 255.0) < 0.0);
    CHECK_THROWS_AS(ssim(Tensor({1, 3, 10, 16}), Tensor({1, 3, 10, 16}), 255.0), ShapeError);
}
