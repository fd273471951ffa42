#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "sspda/errors.hpp"

namespace sspda {

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard, but the standard <random> distributions are not, so the draws we
// need are implemented here directly; a given seed yields the same stream on
// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform double in [0, 1), 53 bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform int in [0, n). Rejection sampling keeps the draw unbiased.
    int below(int n) {
        if (n <= 0) throw ParameterError("Rng::below: bound must be positive");
        const auto un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return static_cast<int>(x % un);
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            const int j = below(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Stable derivation of per-purpose seeds from one experiment seed, so that
// e.g. batch ordering does not depend on how many init draws a method makes.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace sspda
