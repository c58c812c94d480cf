#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "nestsvd/linalg.hpp"

namespace nestsvd {

using Rng = std::mt19937_64;

/// Independent generator for the named sub-stream of a master seed.
/// Streams with different names never share state, so adding draws to one
/// component leaves the others unchanged.
inline Rng make_stream(std::uint64_t master_seed, std::string_view name) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix out(rows, cols);
    // column-major fill keeps the draw order independent of Eigen's storage flags
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
    return out;
}

inline Matrix uniform_matrix(Index rows, Index cols, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> uniform(lo, hi);
    Matrix out(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) out(i, j) = uniform(rng);
    return out;
}

}  // namespace nestsvd
