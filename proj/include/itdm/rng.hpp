#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace itdm {

// Seeded generator. Only the engine comes from <random>; every distribution
// is implemented here because the standard ones are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller.
    double normal();
    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::size_t uniform_index(std::size_t n);

    /// Fisher-Yates.
    void shuffle(std::span<std::size_t> values);
    std::vector<std::size_t> permutation(std::size_t n);

    /// Independent generator for a named sub-stream of the same seed.
    Rng derive(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace itdm
