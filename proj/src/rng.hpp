#pragma once

#include <cstdint>
#include <string_view>

namespace rf {

// splitmix64. Small, stable across platforms, good enough for layout jitter
// and constant derivation. Not for anything adversarial.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). n must be nonzero.
  uint64_t below(uint64_t n) { return next() % n; }

  // Uniform in [lo, hi] inclusive.
  uint64_t range(uint64_t lo, uint64_t hi) { return lo + below(hi - lo + 1); }

  bool chance(double p) {
    return static_cast<double>(next() >> 11) * 0x1.0p-53 < p;
  }
};

// Stateless mix for deriving per-key constants from a seed. Two keys so
// callers can namespace (e.g. per array base, per cell index).
inline uint64_t mix64(uint64_t seed, uint64_t k1, uint64_t k2 = 0) {
  Rng r(seed ^ (k1 * 0xd6e8feb86659fd93ull) ^ (k2 * 0xa5a5a5a5a5a5a5a5ull));
  r.next();
  return r.next();
}

// FNV-1a, for folding names into seeds.
inline uint64_t fnv64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace rf
