#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace reachguard {

constexpr double kPi = std::numbers::pi;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Maps an angle into (-pi, pi].
inline double normalize_angle(double a) {
    if (a > -kPi && a <= kPi) {
        return a;
    }
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) {
        a += 2.0 * kPi;
    } else if (a > kPi) {
        a -= 2.0 * kPi;
    }
    return a;
}

// Error hierarchy. The CLI maps these onto process exit codes.
class ReachError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public ReachError {
public:
    using ReachError::ReachError;
};

class MissingPrerequisite : public ReachError {
public:
    using ReachError::ReachError;
};

class DivergenceError : public ReachError {
public:
    using ReachError::ReachError;
};

class DimensionError : public ReachError {
public:
    using ReachError::ReachError;
};

class OutOfBoundsError : public ReachError {
public:
    using ReachError::ReachError;
};

class FormatError : public ReachError {
public:
    using ReachError::ReachError;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30u)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27u)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31u);
}

// Seed for a named stage: splitmix(global_seed ^ fnv1a(name)).
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : stage) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return splitmix64(global_seed ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace reachguard
