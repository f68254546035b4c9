#pragma once

#include <cstdint>
#include <random>

namespace invargc {

// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seeded random stream that can be split into reproducible, independent
/// child streams keyed by an integer tag. A child depends only on the
/// parent's seed and the tag, never on how much the parent was consumed.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

    RandomStream split(std::uint64_t tag) const { return RandomStream(mix64(seed_ ^ mix64(tag + 0x51ED270B27A1F3ULL))); }

    std::uint64_t seed() const noexcept { return seed_; }

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(engine_); }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
    double sign() { return bernoulli(0.5) ? 1.0 : -1.0; }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace invargc
