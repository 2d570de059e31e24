#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace spectral {

/// Derives an independent child seed from (master, stream) with the
/// SplitMix64 finalizer. Used everywhere a run needs per-layer or per-batch
/// seeds, so the whole seed tree is a pure function of the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Platform-independent random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard library distributions are implementation-defined,
/// so the draws below are written out explicitly:
///   uniform01     53 high bits of one engine output, scaled by 2^-53
///   uniform_below rejection sampling on the top bits (no modulo bias)
///   normal        Box-Muller, both outputs consumed in order
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();
  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_below(std::uint64_t bound);
  double normal();
  void fill_normal(std::span<float> out, double stddev);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace spectral
