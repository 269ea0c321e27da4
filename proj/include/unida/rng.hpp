#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace unida {

/// Counter-based pseudo-random stream.
///
/// Every draw is a pure function of (key, counter), so a stream can be split
/// into independent children with derive() without consuming any state. All
/// stochastic code in the library takes an Rng explicitly; there is no global
/// generator. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return draw(counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (consumes two draws).
  double normal();
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream. Depends only on this stream's key and the tag.
  Rng derive(std::uint64_t tag) const;
  Rng derive(std::string_view tag) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  result_type draw(std::uint64_t counter) const;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Uniform random permutation of 0..n-1 (Fisher-Yates driven by below()).
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

/// 64-bit FNV-1a, used for tags and deterministic run identifiers.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace unida
