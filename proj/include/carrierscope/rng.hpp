#pragma once

#include <cmath>
#include <cstdint>

namespace carrierscope {

// splitmix64: the canonical 64-bit mixer (Steele, Lea, Flood 2014). All
// synthetic randomness in this project derives from it so that runs are
// reproducible from a single seed.
inline constexpr std::uint64_t splitmix64_mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

// Independent substream key: mixes a tag into a seed. Used to key weights,
// per-role prompt streams, and per-checkpoint randomness off one run seed.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                           std::uint64_t tag) {
  return splitmix64_mix(seed ^ splitmix64_mix(tag));
}

// Standard-normal stream via Box-Muller over a SplitMix64 source. Draws are
// consumed in pairs; the second value of each pair is cached.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = rng_.uniform_pos();
    const double u2 = rng_.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace carrierscope
