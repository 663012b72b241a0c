#pragma once

#include <cstdint>
#include <vector>

namespace embedlab {

/// Deterministic random generator: xoshiro256++ seeded through splitmix64.
/// The same seed produces the same stream on every platform; nothing in the
/// toolkit touches global random state.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1).
    double uniform();

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller (two uniform draws per sample).
    double normal();

    /// Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    /// In-place Fisher-Yates shuffle of an index vector.
    void shuffle(std::vector<std::size_t>& v);

    /// Mixes extra words into a seed, for deriving independent sub-streams
    /// (per-epoch shuffles, per-cell runs) from one root seed.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

private:
    std::uint64_t s_[4];
};

}  // namespace embedlab
