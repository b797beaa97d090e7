#pragma once

// Counter-based random streams. Draw n of stream (seed, path) is a pure
// function of (seed, path, n), so a path's increments do not depend on
// which worker simulates it or in what order.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace shiftlab {

// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(mix64(seed ^ 0x6a09e667f3bcc909ULL) + stream * 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t next_u64() noexcept {
    return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on (0, 1].
  double next_unit() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Two independent standard normals (Box-Muller).
  std::pair<double, double> next_normal_pair() noexcept {
    double radius = std::sqrt(-2.0 * std::log(next_unit()));
    double angle = 2.0 * std::numbers::pi * next_unit();
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace shiftlab
