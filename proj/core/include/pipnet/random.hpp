#pragma once

#include <cstdint>
#include <random>

namespace pipnet {

// Independent deterministic RNG stream for (seed, index, tag). Used so that
// per-item randomness does not depend on processing order.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t tag = 0) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                    std::uint32_t(index >> 32), tag};
  return std::mt19937_64(seq);
}

}  // namespace pipnet
