#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace bpgat {

// All sampling goes through std::mt19937_64, whose output sequence is fixed by
// the C++ standard. The std:: distributions are implementation-defined, so the
// draws below are built directly on the raw 64-bit stream to keep datasets
// identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Seeds from several words (e.g. seed and epoch) through std::seed_seq.
  static Rng from_words(std::initializer_list<std::uint64_t> words);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi], unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  bool bernoulli(double p) { return uniform01() < p; }

  // Number of trials until the first success; support {1, 2, ...}.
  std::int64_t geometric(double p);

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bpgat
