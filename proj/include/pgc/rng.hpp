#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pgc {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded 64-bit stream with platform-independent uniform and normal draws.
/// std::*_distribution are avoided since their output is library-specific.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Independent stream for a (seed, stream) pair, e.g. one per step.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
    }

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller, one value per call.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

private:
    std::mt19937_64 engine_;
};

} // namespace pgc
