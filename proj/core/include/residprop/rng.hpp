#pragma once

#include <cmath>
#include <cstdint>

namespace residprop {

// Self-contained splitmix64 generator so generated data is pinned by the
// seed alone, independent of the standard library's distributions.
struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; one value per call, no caching, so the
    // draw sequence is a pure function of the call count.
    double gaussian() {
        const double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }
};

// Stable per-sequence seed derived from (master seed, class, index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t class_idx,
                                 std::uint64_t seq_idx) {
    SplitMix64 rng(master ^ (0xA24BAED4963EE407ull * (class_idx + 1)) ^
                   (0x9FB21C651E98DF25ull * (seq_idx + 1)));
    rng.next();
    return rng.next();
}

}  // namespace residprop
