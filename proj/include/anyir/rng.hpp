#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace anyir {

// xoshiro256** seeded through splitmix64. The value stream depends only on the
// seed and the call sequence; no std:: distributions are used, so streams are
// identical across standard libraries.
class Rng {
public:
    static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64";

    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    // Independent child stream for a named purpose ("init", "augment",
    // "degrade", ...). Deterministic in (seed, purpose, index).
    Rng stream(std::string_view purpose, std::uint64_t index = 0) const;

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    bool coin() { return (next_u64() >> 63) != 0; }
    // Standard normal via Box-Muller; caches the second variate.
    double normal();

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; has_spare_ = false; }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& x);

}  // namespace anyir
