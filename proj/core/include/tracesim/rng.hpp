#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tracesim {

/// All randomness in a run flows through mt19937_64 engines seeded from a
/// single run seed, so runs replay bit-exactly on any platform.
using RngEngine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent child seed for stream `stream` of a root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t s = root ^ (0x510e527fade682d1ULL + stream * 0x9e3779b97f4a7c15ULL);
  splitmix64(s);
  return splitmix64(s);
}

/// Canonical 36-character hyphenated identifier (v4 layout) drawn from `rng`.
std::string random_uuid(RngEngine& rng);

/// Identifier seeded from the OS entropy source, for standalone agents.
std::string random_uuid();

}  // namespace tracesim
