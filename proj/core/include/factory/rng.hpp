#pragma once

#include <cstdint>
#include <string_view>

namespace factory {

/// FNV-1a 64-bit hash. Used for seed derivation and file checksums.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t basis = 0xcbf29ce484222325ull);

/// Deterministic random generator built on splitmix64.
///
/// std:: distributions are implementation-defined, so uniform and normal
/// draws are produced here directly. Identical seeds give identical
/// sequences on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (second draw cached).
  double normal();
  double normal(double mean, double stddev);

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  /// Derive an independent stream keyed by a purpose tag. Forking with the
  /// same tag from the same state is reproducible; tags keep pipeline
  /// stages decoupled so one stage's draw count never shifts another's.
  Rng fork(std::string_view tag) const;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace factory
