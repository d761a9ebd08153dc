#pragma once

#include <cstdint>

namespace featup {

/// splitmix64 finalizer; good avalanche, used to derive independent streams.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `stream` of `base` (e.g. per step, per view).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix64(mix64(base) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

/// Counter-based uniform in [0,1): a pure function of its arguments.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = mix64(derive_seed(derive_seed(seed, a), b));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace featup
