#pragma once

// Shared helpers for the test suites: seeded generators and tolerances.

#include <cmath>
#include <cstdint>
#include <random>

namespace testing {

inline constexpr std::uint32_t kSeed = 20240611u;

inline std::mt19937 rng(std::uint32_t salt = 0) { return std::mt19937(kSeed + salt); }

inline double uniform(std::mt19937& g, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(g);
}

// Log-uniform in [lo, hi], both > 0.
inline double log_uniform(std::mt19937& g, double lo, double hi) {
    return std::exp(uniform(g, std::log(lo), std::log(hi)));
}

inline int uniform_int(std::mt19937& g, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace testing
