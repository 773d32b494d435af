#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mgmo {

// Deterministic random source. All distributions are implemented here on top
// of the (fully specified) mt19937_64 engine, so a given seed produces the
// same stream on every platform and standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  // Standard normal via Box-Muller with a cached spare.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Index draw from an explicit probability vector (need not be exactly
  // normalized; the tail absorbs rounding).
  int categorical(const std::vector<double>& probs);

  // k distinct values from {0, ..., n-1}, order randomized.
  std::vector<int> sample_without_replacement(int n, int k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent child seed from a base seed and up to three stream
// identifiers (purpose tag, step, sentence index). Splitmix64 finalizer per
// word; collisions across distinct inputs are not a practical concern.
uint64_t derive_seed(uint64_t base, uint64_t purpose, uint64_t a = 0, uint64_t b = 0);

// Stream purpose tags used by the trainer and loss code.
enum RngPurpose : uint64_t {
  kRngInit = 1,
  kRngEpoch = 2,
  kRngCmlmMask = 3,
  kRngDropout = 4,
  kRngSample = 5,
  kRngRewardMask = 6,
};

}  // namespace mgmo
