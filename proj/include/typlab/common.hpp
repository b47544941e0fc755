#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace typlab {

// ---------------------------------------------------------------------------
// Error types. The CLI maps these onto process exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct FrameError : Error {
    using Error::Error;
};
struct GenerationError : Error {
    using Error::Error;
};
struct PersistenceError : Error {
    using Error::Error;
};
struct DependencyError : Error {
    using Error::Error;
};
struct IntegrityError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Angles
// ---------------------------------------------------------------------------

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
    double w = a - 2.0 * kPi * std::floor((a + kPi) / (2.0 * kPi));
    if (w >= kPi) w -= 2.0 * kPi;  // guard against rounding at the seam
    return w;
}

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// All randomness in the library flows through either a stateful Rng (training
// loops, scene layout) or the stateless hash_rng helpers (per-ray drop tests,
// per-cell threshold noise), so repeated runs with the same seed are bitwise
// identical on a given build.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Order-sensitive 64-bit mix of a seed and a list of stream tags.
inline std::uint64_t hash64(std::uint64_t seed) {
    std::uint64_t s = seed + 0x632be59bd9b4e019ULL;
    return splitmix64(s);
}

template <typename... Rest>
std::uint64_t hash64(std::uint64_t seed, std::uint64_t head, Rest... rest) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2) + head);
    return hash64(splitmix64(s), rest...);
}

inline double u64_to_unit(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;  // [0, 1)
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(hash64(seed)) {}

    std::uint64_t u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() { return u64_to_unit(u64()); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Standard normal via Box-Muller; generates pairs, caches the second.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        cache_ = r * std::sin(2.0 * kPi * u2);
        has_cache_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Derives an independent child stream; the parent state is unaffected.
    Rng fork(std::uint64_t tag) const { return Rng(hash64(state_, tag)); }

    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

/// Stateless uniform draw keyed by (seed, tags...): used where each element
/// needs its own independent, order-free random value.
template <typename... Tags>
double hash_uniform(std::uint64_t seed, Tags... tags) {
    return u64_to_unit(hash64(seed, static_cast<std::uint64_t>(tags)...));
}

/// Stateless standard normal keyed by (seed, tags...).
template <typename... Tags>
double hash_normal(std::uint64_t seed, Tags... tags) {
    double u1 = u64_to_unit(hash64(seed, static_cast<std::uint64_t>(tags)..., std::uint64_t{0}));
    const double u2 = u64_to_unit(hash64(seed, static_cast<std::uint64_t>(tags)..., std::uint64_t{1}));
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

}  // namespace typlab
