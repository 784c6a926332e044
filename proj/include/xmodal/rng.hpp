#pragma once

#include <cstdint>
#include <random>

namespace xmodal {

// SplitMix64 finalizer. Used to derive independent child seeds.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Combines a root seed with stream tags into a child seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) noexcept;

// Deterministic generator: std::mt19937_64 for raw bits, 53-bit mantissa
// uniforms, Box-Muller normals and rejection-sampled bounded integers.
// Every draw is defined here rather than by <random> distributions, whose
// output is implementation-specific, so streams are identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  // Standard normal.
  double normal();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xmodal
