#pragma once

#include <cstdint>
#include <random>

#include "emloc/matrix.hpp"

namespace emloc {

/// Derives an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer). Keeps pipeline stages reproducible without
/// sharing engine state across them.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline Matrix random_gaussian(std::size_t rows, std::size_t cols, double stddev,
                              std::mt19937_64& eng) {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : m.data()) v = dist(eng);
    return m;
}

inline Matrix random_gaussian(std::size_t rows, std::size_t cols, double stddev,
                              std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    return random_gaussian(rows, cols, stddev, eng);
}

}  // namespace emloc
