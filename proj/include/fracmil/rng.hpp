#pragma once
// Seeded random streams. Every stochastic step derives its generator from a
// key (seed plus identifying parts) so results do not depend on call order.

#include <cstdint>
#include <random>
#include <string_view>

namespace fracmil {

using Rng = std::mt19937_64;

// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view bytes,
                              std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t mix_key(std::uint64_t h, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) {
    h ^= (v >> (8 * k)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline Rng keyed_rng(std::uint64_t seed, std::string_view tag) {
  return Rng(fnv1a(tag, mix_key(0xcbf29ce484222325ULL, seed)));
}

inline Rng keyed_rng(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
  return Rng(mix_key(fnv1a(tag, mix_key(0xcbf29ce484222325ULL, seed)), a));
}

inline Rng keyed_rng(std::uint64_t seed, std::string_view tag, std::string_view id,
                     std::uint64_t a) {
  return Rng(mix_key(fnv1a(id, fnv1a(tag, mix_key(0xcbf29ce484222325ULL, seed))), a));
}

}  // namespace fracmil
