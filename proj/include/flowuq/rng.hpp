#pragma once

#include <cstdint>
#include <random>

namespace flowuq {

using Rng = std::mt19937_64;

/// Purposes of the independent sub-streams used inside one draw.
enum class Stream : std::uint64_t {
  Data = 1,
  Theta = 2,
  Inner = 3,
  Simulation = 4,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Generator for draw `index` of a run seeded with `seed`. The state depends
/// only on (seed, index, purpose), so results do not depend on which worker
/// executes which draw.
inline Rng stream_for(std::uint64_t seed, std::uint64_t index, Stream purpose) {
  const std::uint64_t key =
      splitmix64(splitmix64(splitmix64(seed) ^ index) ^ static_cast<std::uint64_t>(purpose));
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(purpose)};
  return Rng(seq);
}

}  // namespace flowuq
