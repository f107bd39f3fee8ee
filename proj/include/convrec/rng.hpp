#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "convrec/error.hpp"

namespace convrec {

/// Deterministic random source.
///
/// Wraps std::mt19937_64 but implements every distribution by hand, because
/// the std distribution adapters are implementation-defined and would break
/// bit-for-bit reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). Rejection-sampled, so unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t range(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ContractError("Rng::range: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(below(span));
  }

  /// Uniform double in [0, 1) with 53 bits of mantissa.
  double unit() { return (engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  /// Bernoulli draw with success probability p.
  bool flip(double p) { return unit() < p; }

  /// Fisher-Yates shuffle, in place.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// One element chosen uniformly. Throws SamplingError on an empty vector.
  template <typename T>
  const T& pick(const std::vector<T>& v) {
    if (v.empty()) throw SamplingError("Rng::pick: empty set");
    return v[static_cast<std::size_t>(below(v.size()))];
  }

  /// k distinct elements in draw order (k > size throws SamplingError).
  template <typename T>
  std::vector<T> sample(const std::vector<T>& v, std::size_t k) {
    if (k > v.size()) throw SamplingError("Rng::sample: k exceeds set size");
    std::vector<T> pool = v;
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace convrec
