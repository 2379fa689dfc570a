#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mfc {

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, index, counter), so results never depend on the order in
/// which particles are processed.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits(std::uint64_t stream, std::uint64_t index, std::uint64_t counter) const {
    std::uint64_t h = mix(seed_ + 0x9E3779B97F4A7C15ULL);
    h = mix(h ^ (stream * 0xD1B54A32D192ED03ULL));
    h = mix(h ^ (index * 0xAEF17502108EF2D9ULL));
    h = mix(h ^ (counter * 0xF1357AEA2E62A9C5ULL + 0x632BE59BD9B4E019ULL));
    return h;
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t stream, std::uint64_t index, std::uint64_t counter) const {
    return (static_cast<double>(bits(stream, index, counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller. Components 2p and 2p+1 share the uniform
  /// pair with counter p.
  double normal(std::uint64_t stream, std::uint64_t index, std::uint64_t component) const {
    const std::uint64_t pair = component / 2;
    const double u1 = uniform(stream, index, 2 * pair);
    const double u2 = uniform(stream, index, 2 * pair + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (component % 2 == 0) ? r * std::cos(angle) : r * std::sin(angle);
  }

  /// Derives an independent seed, e.g. one per outer iteration.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    return mix(mix(seed ^ 0xA0761D6478BD642FULL) + salt * 0xE7037ED1A0B428DBULL);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
};

/// Stream tags used by the simulator and the samplers.
namespace rng_stream {
inline constexpr std::uint64_t kInitial = 1;
inline constexpr std::uint64_t kBrownian = 2;
inline constexpr std::uint64_t kSubsample = 3;
inline constexpr std::uint64_t kValidation = 4;
}  // namespace rng_stream

}  // namespace mfc
