#pragma once

#include <cstdint>
#include <random>

namespace anmi {

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministic child seed for stream `index` under `base`.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return mix64(mix64(base) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Random stream used by every stochastic routine. Not thread-safe; give each
/// worker its own instance.
class Rng {
public:
    using engine_type = std::mt19937_64;

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() noexcept {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() { return std::normal_distribution<double>{}(engine_); }

    double gamma(double shape) { return std::gamma_distribution<double>{shape, 1.0}(engine_); }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    engine_type& engine() noexcept { return engine_; }

private:
    engine_type engine_;
};

}  // namespace anmi
