#pragma once

#include <cstdint>
#include <string_view>

namespace agtcnet {

// Counter-based random stream. The draw at position `counter` depends only on
// (seed, counter), so a stream can be reproduced or forked without carrying
// engine state around.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent substream keyed by an integer or a tag.
  RngStream fork(std::uint64_t key) const;
  RngStream fork(std::string_view tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace agtcnet
