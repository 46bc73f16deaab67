#pragma once

#include <cstddef>
#include <cstdint>

namespace fkb {

/// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// Child seed for substream `key` of `base`: splitmix64(base ^ splitmix64(key + 1)).
/// Used for per-replication, per-tree and per-stage streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key);

/// xoshiro256** seeded by four successive splitmix64 outputs.
///
/// Every variate has a fixed cost in raw 64-bit draws so that datasets
/// can be regenerated by any implementation following the same rules:
///   uniform()   1 draw, (x >> 11) * 2^-53, in [0, 1)
///   normal()    2 draws, Box-Muller cosine branch, u1 mapped to (0, 1]
///   below(n)    1 draw, high 64 bits of x * n
/// gamma() is rejection based and consumes a variable number of draws.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double normal();
  std::size_t below(std::size_t n);
  /// Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);
  /// Chi-squared with `dof` degrees of freedom.
  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next(); }

 private:
  std::uint64_t s_[4];
};

}  // namespace fkb
