#include "agtcnet/rng.hpp"

namespace agtcnet {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t pos = counter_++;
  return splitmix64(splitmix64(seed_) ^ (pos * 0xd1b54a32d192ed03ULL));
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

RngStream RngStream::fork(std::uint64_t key) const {
  return RngStream(splitmix64(seed_ ^ splitmix64(key + 0x632be59bd9b4e019ULL)), 0);
}

RngStream RngStream::fork(std::string_view tag) const {
  // FNV-1a over the tag, then the integer fork.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fork(h);
}

}  // namespace agtcnet
