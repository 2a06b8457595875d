#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace semg {

/// Independent random streams. Every subsystem draws from its own stream so
/// that adding draws in one place never shifts the numbers seen elsewhere.
enum class Stream : std::uint64_t {
    environment = 1,   // transmitter placement
    shadowing = 2,     // white field behind the shadowing convolution
    measurement = 3,   // sensor noise during a mission
    diffusion = 4,     // forward-process noise, timesteps, reverse sampling
    policy = 5,        // action sampling and policy updates
    init = 6,          // network weight initialization
    data = 7,          // training minibatch selection
    exploration = 8,   // DDPG action noise and replay sampling
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a child seed from (seed, stream, index) by chained splitmix64.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    return splitmix64(h ^ (index * 0xd1342543de82ef95ULL));
}

/// mt19937_64 engine with portable uniform/normal conversions (the standard
/// distributions are implementation-defined, these are not).
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
    Rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) : engine_(derive_seed(seed, stream, index)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] (inclusive), rejection sampled.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(engine_());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do { r = engine_(); } while (r >= limit);
        return lo + static_cast<std::int64_t>(r % span);
    }

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

  private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace semg
