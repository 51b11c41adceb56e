#pragma once

#include <cstdint>
#include <random>

namespace unigrf {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, user, epoch); identical no matter how users are sharded.
inline Rng user_stream(std::uint64_t seed, std::uint64_t user, std::uint64_t epoch = 0) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ user) ^ (epoch * 0xD1B54A32D192ED03ULL)));
}

}  // namespace unigrf
