#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>

namespace hiercurric {

/// SplitMix64 finalizer; used to expand user seeds and derive sub-streams.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Independent stream for `purpose` under `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) noexcept;

/// Reproducible random source.
///
/// Engine is std::mt19937_64 (bit-exact by the C++ standard) seeded with
/// splitmix64(seed). Distributions are implemented here rather than taken
/// from <random>, whose distribution algorithms are implementation-defined:
///   uniform()  = (u64 >> 11) * 2^-53, in [0, 1)
///   below(n)   = rejection sampling on the top of the u64 range (unbiased)
///   normal()   = Box-Muller, cosine branch, two uniforms per draw
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  /// Opaque textual engine state, restorable with set_state().
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace hiercurric
