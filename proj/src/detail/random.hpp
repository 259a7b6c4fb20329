#ifndef RBSDE_LAB_DETAIL_RANDOM_HPP
#define RBSDE_LAB_DETAIL_RANDOM_HPP

#include <cstdint>
#include <random>

namespace rbsde::detail {

// std::uniform_real_distribution is implementation-defined; this mapping is
// not, so seeded runs agree across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace rbsde::detail

#endif  // RBSDE_LAB_DETAIL_RANDOM_HPP
