#pragma once

// Counter-based random streams. A stream is (seed, stream id, counter); every
// draw is a pure hash of that triple, so independent callers can split off
// their own stream without sharing state.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ellreach/linalg.hpp"

namespace ellreach {

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  /// Independent child stream; `split(k)` is deterministic in k.
  CounterRng split(std::uint64_t k) const {
    return CounterRng(seed_, mix(stream_ * 0x9E3779B97F4A7C15ULL + k + 1));
  }

  std::uint64_t next_u64() {
    return mix(seed_ ^ mix(stream_ + 0xD1B54A32D192ED03ULL) ^
               mix(counter_++ + 0x8CB92BA72F3D8DD7ULL));
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  Vector normal_vector(int d) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = normal();
    return v;
  }

  /// Uniform on the unit sphere S^{d-1}.
  Vector unit_vector(int d) {
    for (;;) {
      Vector v = normal_vector(d);
      const double n = v.norm();
      if (n > 1e-300) return v / n;
    }
  }

  /// Uniform in the closed unit ball.
  Vector unit_ball(int d) {
    return unit_vector(d) * std::pow(uniform(), 1.0 / d);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace ellreach
