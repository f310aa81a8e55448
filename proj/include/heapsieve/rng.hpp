#pragma once

#include <cstdint>

namespace heapsieve {

/// splitmix64: tiny, fast, and good enough for search-space sampling.
/// Every candidate gets its own stream derived from (master_seed, index),
/// which is what makes serial and parallel runs produce identical results.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, n). n must be nonzero. Uses 128-bit multiply
  /// rejection-free mapping (Lemire); bias is negligible for our ranges.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Uniform integer in [lo, hi] inclusive.
  uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

/// Stream seed for the i-th candidate of a run. A single splitmix step over
/// the mixed pair keeps neighbouring indices decorrelated.
inline uint64_t substream_seed(uint64_t master, uint64_t index) {
  SplitMix64 g(master ^ (0xD1B54A32D192ED03ull * (index + 1)));
  return g.next();
}

/// FNV-1a over bytes; used for config hashes and name-derived seeds so that
/// manifests are stable across platforms and runs.
inline uint64_t fnv1a64(const void* data, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace heapsieve
