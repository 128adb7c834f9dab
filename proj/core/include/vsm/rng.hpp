#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace vsm {

// Deterministic random stream: mt19937_64 plus a hand-rolled polar normal so
// the exact draw sequence does not depend on the standard library version.
// fork(tag) derives an independent child stream from the root seed, so runs
// can hand disjoint streams to data generation, training and evaluation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t u64() { return eng_(); }
  // Uniform in (0, 1), never exactly 0 or 1.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  void normal(std::span<double> out);
  // Index in [0, n) from a discrete distribution given by non-negative
  // weights (not necessarily normalized).
  int categorical(std::span<const double> weights);

  Rng fork(std::uint64_t tag) const;
  std::uint64_t root_seed() const { return root_seed_; }

 private:
  std::mt19937_64 eng_;
  std::uint64_t root_seed_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// SplitMix64 step; used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace vsm
