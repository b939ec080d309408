#include "bpgat/rng.hpp"

#include <limits>
#include <vector>

#include "bpgat/errors.hpp"

namespace bpgat {

Rng Rng::from_words(std::initializer_list<std::uint64_t> words) {
  std::vector<std::uint32_t> halves;
  for (auto w : words) {
    halves.push_back(static_cast<std::uint32_t>(w & 0xffffffffu));
    halves.push_back(static_cast<std::uint32_t>(w >> 32));
  }
  std::seed_seq seq(halves.begin(), halves.end());
  Rng rng;
  rng.engine_.seed(seq);
  return rng;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InvalidArgument("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo);
  if (span == std::numeric_limits<std::uint64_t>::max()) return static_cast<std::int64_t>(engine_());
  const std::uint64_t range = span + 1;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              (std::numeric_limits<std::uint64_t>::max() % range);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return lo + static_cast<std::int64_t>(x % range);
}

std::int64_t Rng::geometric(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidArgument("geometric: p must be in (0, 1]");
  std::int64_t trials = 1;
  while (!bernoulli(p)) ++trials;
  return trials;
}

}  // namespace bpgat
