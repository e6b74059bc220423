#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dpk {

// All randomness in a run flows from a single root seed. Sub-streams are
// derived by hashing (seed, purpose) so that adding a new consumer never
// perturbs existing ones.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// derive_seed(seed, "purpose") -> sub-seed; documented contract for
// reproducing any stream offline.
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose) {
  return splitmix64(seed ^ fnv1a64(purpose));
}

inline uint64_t derive_seed(uint64_t seed, std::string_view purpose, uint64_t index) {
  return splitmix64(derive_seed(seed, purpose) + splitmix64(index));
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed, std::string_view purpose) {
  return Rng(derive_seed(seed, purpose));
}

inline Rng make_rng(uint64_t seed, std::string_view purpose, uint64_t index) {
  return Rng(derive_seed(seed, purpose, index));
}

}  // namespace dpk
