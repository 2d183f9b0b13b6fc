#include "pipnet/train/sampler.hpp"

#include <algorithm>

#include "pipnet/error.hpp"

namespace pipnet::train {

BalancedSampler::BalancedSampler(std::span<const std::size_t> labels, std::uint64_t seed, std::size_t num_classes)
    : rng_(seed) {
  if (labels.empty()) throw InvalidArgument("balanced sampler needs at least one example");
  if (num_classes == 0) num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  by_class_.resize(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw InvalidArgument("label " + std::to_string(labels[i]) + " out of range");
    by_class_[labels[i]].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (by_class_[c].empty()) throw InvalidArgument("class " + std::to_string(c) + " has no examples");
}

std::size_t BalancedSampler::next() {
  const auto& members = by_class_[std::uniform_int_distribution<std::size_t>(0, by_class_.size() - 1)(rng_)];
  return members[std::uniform_int_distribution<std::size_t>(0, members.size() - 1)(rng_)];
}

std::vector<std::size_t> BalancedSampler::next_batch(std::size_t count) {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = next();
  return out;
}

}  // namespace pipnet::train
