#pragma once

#include <cstdint>
#include <random>

namespace pk {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds from a parent.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return mix64(base ^ mix64(salt));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(base, a), b);
}

// Seed of sample `id` within a seeded batch.
inline std::uint64_t sample_seed(std::uint64_t base, std::uint64_t id) { return base ^ id; }

}  // namespace pk
