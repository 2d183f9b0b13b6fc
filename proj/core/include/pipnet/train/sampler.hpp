#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pipnet::train {

// Infinite class-balanced index stream: each draw picks a class uniformly,
// then an example of that class uniformly, so an example's probability is
// proportional to 1 / (size of its class).
class BalancedSampler {
 public:
  // Every class in [0, num_classes) must have at least one example;
  // num_classes == 0 means max(label) + 1.
  BalancedSampler(std::span<const std::size_t> labels, std::uint64_t seed, std::size_t num_classes = 0);

  std::size_t next();
  std::vector<std::size_t> next_batch(std::size_t count);

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  std::mt19937_64 rng_;
};

inline BalancedSampler balanced_indices(std::span<const std::size_t> labels, std::uint64_t seed) {
  return BalancedSampler(labels, seed);
}

}  // namespace pipnet::train
