#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace npis {

/// Name recorded in output headers for reproducibility.
inline constexpr std::string_view kGeneratorName = "mt19937_64+splitmix64-streams";

/// SplitMix64 finalizer; a bijection on 64-bit words.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed of substream `stream` under `master`. Streams are addressed by a
/// counter, so derived seeds do not depend on scheduling or worker count.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

/// Mersenne Twister with a platform-independent uniform mapping.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  void fill_uniform(std::span<double> out) noexcept {
    for (double& u : out) u = uniform();
  }

  /// Exponential variate by inversion, so equal `u` streams give equal paths.
  double exponential(double rate) noexcept;

  /// Standard normal variate by inversion.
  double normal();

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Standard normal quantile.
double normal_quantile(double u);

}  // namespace npis
