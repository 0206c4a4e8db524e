#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "anyir/cli.hpp"
#include "anyir/image_io.hpp"
#include "anyir/network.hpp"
#include "json.hpp"

using namespace anyir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("anyir_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream o(p);
    o << text;
}

}  // namespace

TEST_CASE("params presets land within 10% of the published sizes") {
    const Run tiny = run({"params", "--preset", "tiny", "--json"});
    REQUIRE(tiny.code == 0);
    const auto total = nlohmann::json::parse(tiny.out).at("total").get<double>();
    CHECK(std::abs(total / 5.74e6 - 1.0) <= 0.10);
    const Run small = run({"params", "--preset", "small", "--json"});
    REQUIRE(small.code == 0);
    CHECK(std::abs(nlohmann::json::parse(small.out).at("total").get<double>() / 8.51e6 - 1.0) <= 0.10);
    const Run table = run({"params", "--preset", "tiny"});
    CHECK(table.out.find("total") != std::string::npos);
}

TEST_CASE("flops at 224 is within 25% of 26G and small costs more") {
    const Run tiny = run({"flops", "--preset", "tiny", "--size", "224", "--json"});
    const Run small = run({"flops", "--preset", "small", "--size", "224", "--json"});
    REQUIRE(tiny.code == 0);
    REQUIRE(small.code == 0);
    const auto t = nlohmann::json::parse(tiny.out), s = nlohmann::json::parse(small.out);
    const double macs = t.at("total_macs").get<double>(), flops = t.at("total_flops").get<double>();
    CHECK(std::min(std::abs(macs / 26e9 - 1.0), std::abs(flops / 26e9 - 1.0)) <= 0.25);
    CHECK(s.at("total_macs").get<double>() > macs);
    CHECK(run({"flops", "--preset", "tiny", "--size", "100"}).code == kExitConfig);
}

TEST_CASE("exit codes") {
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"params", "--no-such-flag"}).code == kExitUsage);
    CHECK(run({"params", "--help"}).code == kExitOk);
    CHECK(run({"params", "--preset", "huge"}).code == kExitConfig);

    const auto dir = scratch("codes");
    write_file(dir / "broken.json", "{ not json");
    CHECK(run({"params", "--config", (dir / "broken.json").string()}).code == kExitConfig);
    write_file(dir / "unknown.json", R"({"model": {"embed_dims": 8}})");
    CHECK(run({"params", "--config", (dir / "unknown.json").string()}).code == kExitConfig);
    write_file(dir / "model.json", R"({"model": {"embed_dim": 8}})");
    CHECK(run({"params", "--config", (dir / "model.json").string(), "--preset", "tiny"}).code == kExitConfig);
    CHECK(run({"params", "--config", (dir / "missing.json").string()}).code == kExitIo);
    CHECK(run({"restore", "--checkpoint", (dir / "none.bin").string(), "--input", "a.png", "--output", "b.png"}).code ==
          kExitIo);
    CHECK(run({"make-data", "--out", (dir / "d").string(), "--degradation", "haze:2"}).code == kExitConfig);
    CHECK(run({"make-data", "--out", (dir / "d").string(), "--size", "12"}).code == kExitConfig);
    fs::remove_all(dir);
}

TEST_CASE("restore with a zero output conv reproduces the input pixels") {
    const auto dir = scratch("restore");
    ModelConfig cfg = ModelConfig::toy();
    cfg.zero_init_output = true;
    save_checkpoint(ModelF::build(cfg), dir / "identity.bin");
    // 13 x 21 is not a multiple of 8, so padding and cropping are exercised.
    Tensor img({1, 3, 13, 21});
    Rng rng(5);
    for (auto& v : img.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
    write_png(dir / "in.png", img);
    const Run r = run({"restore", "--checkpoint", (dir / "identity.bin").string(), "--input",
                       (dir / "in.png").string(), "--output", (dir / "out.png").string()});
    REQUIRE(r.code == 0);
    const Tensor a = read_png(dir / "in.png"), b = read_png(dir / "out.png");
    REQUIRE(a.shape() == b.shape());
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    fs::remove_all(dir);
}

TEST_CASE("make-data is deterministic and echoes its effective config") {
    const auto dir = scratch("make_data");
    for (const char* sub : {"a", "b"}) {
        const Run r = run({"make-data", "--out", (dir / sub).string(), "--count", "3", "--size", "16", "--seed", "9"});
        REQUIRE(r.code == 0);
    }
    for (const char* f : {"clean/0002.png", "degraded/0002.png", "manifest.json", "effective_config.json"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    const auto eff = nlohmann::json::parse(slurp(dir / "a" / "effective_config.json"));
    CHECK(eff.at("data").at("seed") == 9);
    CHECK(eff.at("data").at("crop") == 16);
    fs::remove_all(dir);
}

TEST_CASE("flags override config file values") {
    const auto dir = scratch("override");
    write_file(dir / "cfg.json", R"({"model": {"embed_dim": 8, "blocks": [1,1,1,1], "refinement_blocks": 1},
                                     "train": {"steps": 2, "batch": 1, "crop": 16, "seed": 4},
                                     "data": {"train_count": 2, "val_count": 1, "crop": 16}})");
    const Run r = run({"train", "--config", (dir / "cfg.json").string(), "--seed", "11", "--steps", "3", "--out",
                       (dir / "run").string()});
    REQUIRE(r.code == 0);
    const auto eff = nlohmann::json::parse(slurp(dir / "run" / "effective_config.json"));
    CHECK(eff.at("train").at("seed") == 11);
    CHECK(eff.at("train").at("steps") == 3);
    CHECK(eff.at("model").at("embed_dim") == 8);
    CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
    CHECK(fs::exists(dir / "run" / "final_eval.json"));
    std::istringstream lines(slurp(dir / "run" / "metrics.jsonl"));
    int steps = 0;
    for (std::string line; std::getline(lines, line);) steps += nlohmann::json::parse(line).contains("l1");
    CHECK(steps == 3);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck and selftest succeed") {
    const Run g = run({"gradcheck"});
    CHECK(g.code == 0);
    CHECK(g.out.find("FAIL") == std::string::npos);
    const Run s = run({"selftest"});
    CHECK(s.code == 0);
    CHECK(s.out.find("selftest passed") != std::string::npos);
}
