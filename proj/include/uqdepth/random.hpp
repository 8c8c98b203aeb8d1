#pragma once

#include <cstdint>

namespace uqd {

// SplitMix64 finalizer; derives independent sub-seeds (per sample, per
// head, per step) from a base seed without sharing an RNG stream.
constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace uqd
