#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lsme {

// 64-bit FNV-1a. Used for purpose tags and content-keyed seeds.
std::uint64_t HashTag(std::string_view tag);

// Sub-seed for one purpose: root XOR hash(tag).
std::uint64_t DeriveSeed(std::uint64_t root, std::string_view tag);

// Seeded generator with distributions defined here rather than by the
// standard library, so streams are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t NextU64() { return engine_(); }

  // Uniform on [0, 1).
  double Uniform();
  // Uniform on [lo, hi).
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer on [0, n). n must be positive.
  std::uint64_t UniformIndex(std::uint64_t n);
  // Standard normal (Box-Muller).
  double Normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lsme
