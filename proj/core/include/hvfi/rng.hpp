#pragma once

#include <cstdint>
#include <random>

#include "hvfi/tensor.hpp"

namespace hvfi {

/// Seeded generator. Distributions are mapped by hand from the raw 64-bit
/// stream so sequences do not depend on the standard library's distribution
/// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Inclusive range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p = 0.5) { return uniform() < p; }
  double normal();

  /// Independent child stream, e.g. one per epoch or per sample.
  Rng fork(std::uint64_t salt) const;

 private:
  std::mt19937_64 engine_;
};

template <class T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace hvfi
