#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace normprod {

/// Seedable random source with platform-independent output.
///
/// The raw stream is std::mt19937_64 (the algorithm is fixed by the C++
/// standard, so identical seeds give identical streams everywhere). The
/// real-valued mappings below are implemented explicitly rather than via
/// std::*_distribution, whose output is implementation-defined:
///   uniform01: (x >> 11) * 2^-53, in [0, 1)
///   normal:    Box-Muller on two fresh draws,
///              sqrt(-2 ln(1-u1)) * cos(2 pi u2)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    /// Standard normal; consumes exactly two 64-bit draws.
    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection-free enough for test-scale use: plain modulo
        // bias is < 2^-50 for the small n used here, but reject anyway.
        const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace normprod
