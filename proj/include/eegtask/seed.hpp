#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eegtask {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates nearby integer seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-stage seed: the stage name is hashed into the global seed so every
/// stage draws from an independent stream reproducible from one number.
constexpr std::uint64_t derive_seed(std::uint64_t global, std::string_view stage) noexcept {
  return mix_seed(global ^ fnv1a(stage));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return mix_seed(parent ^ mix_seed(index + 0x51ed270b27a3ULL));
}

}  // namespace eegtask
