#pragma once

#include "softorder/types.hpp"

#include <random>
#include <vector>

namespace softorder {

/// Deterministic 64-bit generator (std::mt19937_64 engine, whose output
/// sequence is fixed by the standard) with hand-rolled distributions so that
/// identical seeds give identical streams on every platform.
class Rng {
public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next() { return engine_(); }

  /// Uniform in [0, 1): top 53 bits of the raw draw.
  Scalar uniform() { return static_cast<Scalar>((next() >> 11) * 0x1.0p-53); }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is negligible for n << 2^64 and
  /// irrelevant here; determinism is the contract.
  Index uniform_index(Index n) { return static_cast<Index>(next() % static_cast<uint64_t>(n)); }

  /// Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
      Index j = uniform_index(i + 1);
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  /// Independent stream derived from this generator's seed (not its state).
  Rng derive(uint64_t stream) const { return Rng(splitmix64(seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1))); }

  static uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

} // namespace softorder
