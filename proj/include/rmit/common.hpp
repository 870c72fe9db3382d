#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rmit {

// Explicit random source threaded through every stochastic host-side
// operation. Torch-side sampling uses torch's default CPU generator.
using Rng = std::mt19937_64;

// Stable 64-bit FNV-1a. Used for config hashes that must not change between
// builds or standard library implementations.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a base seed and a tag so that,
// e.g., evaluation sampling never consumes the training stream.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = fnv1a64(tag);
  h ^= base + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// Uniform double in [0, 1) from 53 random bits. Independent of the
// distribution implementation of the standard library in use.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

}  // namespace rmit
