#pragma once

#include <cstdint>

namespace qlab {

// Counter-based randomness: every draw is a pure function of its key, so
// streams can be regenerated in any order and from any worker.

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dULL);
  h = mix64(h ^ a);
  h = mix64(h ^ (b * 0xd6e8feb86659fd93ULL));
  h = mix64(h ^ (c * 0xa0761d6478bd642fULL));
  return h;
}

/// Uniform double in [0,1) with 53 random bits.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Keyed uniform stream: (seed, stream, step, lane) -> [0,1).
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

  constexpr double uniform(std::uint64_t stream, std::uint64_t step, std::uint64_t lane = 0) const noexcept {
    return to_unit(hash_key(seed_, stream, step, lane));
  }

  constexpr std::uint64_t bits(std::uint64_t stream, std::uint64_t step, std::uint64_t lane = 0) const noexcept {
    return hash_key(seed_, stream, step, lane);
  }

  constexpr std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace qlab
