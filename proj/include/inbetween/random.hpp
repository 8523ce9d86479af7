#pragma once

// Portable draws on top of mt19937_64 (whose output sequence is fixed by the
// standard, unlike the <random> distributions).

#include <cmath>
#include <cstdint>
#include <random>

namespace inbetween {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Integer in [lo, hi].
inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(rng() % span);
}

/// Box-Muller, one value per call.
inline double normal(std::mt19937_64& rng, double mean = 0.0, double stddev = 1.0) {
    const double u1 = 1.0 - uniform01(rng), u2 = uniform01(rng);
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace inbetween
