#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace orflow {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded RNG with hand-implemented distributions. The mt19937_64 engine is
/// fully specified by the standard; the standard library's *distributions*
/// are not, so we implement the few we need to keep results reproducible
/// across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], both inclusive. Unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 2^64 span
        const std::uint64_t limit = (UINT64_MAX / range) * range;
        std::uint64_t r = next_u64();
        while (r >= limit) r = next_u64();
        return lo + static_cast<std::int64_t>(r % range);
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per draw; no
    /// cached spare, so the stream position is a pure function of call count.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent stream for (seed, stream) pairs, e.g. one per synthetic case.
    static Rng derived(std::uint64_t seed, std::uint64_t stream) {
        return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace orflow
