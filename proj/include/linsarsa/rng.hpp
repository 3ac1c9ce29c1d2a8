#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string_view>

namespace linsarsa {

/// Seeded generator with independent substreams.
///
/// Engine is std::mt19937_64, whose output sequence is fixed by the standard.
/// Seeds are scrambled through SplitMix64 so (seed, stream) pairs give
/// unrelated sequences. Uniforms and normals are derived here rather than
/// through <random> distributions, whose algorithms vary between standard
/// library implementations. Bump kName whenever any derivation changes.
class Rng {
public:
    static constexpr std::string_view kName = "mt19937_64+splitmix64/v1";

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

    /// Child generator for substream `stream`; the parent state is untouched.
    Rng split(std::uint64_t stream) const { return Rng(seed_material(), stream); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal by Box-Muller; consumes exactly two uniforms.
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Index drawn from `weights` (assumed to sum to 1) by inverse CDF.
    /// Zero-weight entries are never returned.
    std::size_t categorical(std::span<const double> weights) {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            acc += weights[i];
            last_positive = i;
            if (u < acc) return i;
        }
        return last_positive;
    }

    static constexpr std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t seed_material() const {
        std::mt19937_64 copy = engine_;
        return copy();
    }

    std::mt19937_64 engine_;
};

}  // namespace linsarsa
