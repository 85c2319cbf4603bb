// Stable hashing and seed derivation for reproducible data streams.
#pragma once

#include <cstdint>
#include <string_view>

namespace icregress {

/// splitmix64 finalizer; the standard 64-bit avalanche.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over bytes; used for content-addressed checkpoint names.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
  return mix_seed(splitmix64(seed ^ splitmix64(next)), rest...);
}

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::string_view label, Rest... rest) {
  return mix_seed(splitmix64(seed ^ fnv1a64(label)), rest...);
}

}  // namespace icregress
