#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace clf {

// splitmix64 step; used both as the generator state transition for seed
// derivation and to mix tag strings into substream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (seed, tag, indices...). Every
// consumer of randomness owns its own derived stream so that adding or
// removing one consumer never shifts the draws of another.
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  uint64_t s = seed;
  for (char c : tag) {
    s ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    splitmix64(s);
  }
  return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a) {
  uint64_t s = derive_seed(seed, tag) ^ (a * 0x9e3779b97f4a7c15ull);
  return splitmix64(s);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  uint64_t s = derive_seed(seed, tag, a) ^ (b * 0xd6e8feb86659fd93ull);
  return splitmix64(s);
}

// Deterministic generator with explicit distribution code. The standard
// <random> distributions are implementation-defined, so everything that
// must reproduce bit-for-bit goes through this class instead.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // warm up so that small seeds do not produce correlated first draws
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform double in [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform double in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n), n >= 1; rejection-free via 128-bit multiply
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace clf
