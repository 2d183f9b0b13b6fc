#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "pipnet/numerics/tensor.hpp"

namespace pipnet::model {

// The sparse non-negative prototype-to-class weight matrix W [P,C].
//
// Disabling a prototype zeroes its row in the effective weights but keeps
// the stored values, so enable() restores the exact original behavior.
// Copies are deep.
class ScoringSheet {
 public:
  ScoringSheet() = default;
  ScoringSheet(std::size_t num_prototypes, std::size_t num_classes, double relevance_epsilon = 1e-3);
  ScoringSheet(const ScoringSheet& other);
  ScoringSheet& operator=(const ScoringSheet& other);
  ScoringSheet(ScoringSheet&&) noexcept = default;
  ScoringSheet& operator=(ScoringSheet&&) noexcept = default;

  std::size_t num_prototypes() const { return prototypes_; }
  std::size_t num_classes() const { return classes_; }
  double relevance_epsilon() const { return relevance_epsilon_; }
  void set_relevance_epsilon(double epsilon) { relevance_epsilon_ = epsilon; }

  double weight(std::size_t prototype, std::size_t cls) const;
  // Zero for disabled rows and for entries below relevance_epsilon.
  double effective_weight(std::size_t prototype, std::size_t cls) const;
  std::vector<double> effective_weights() const;  // row-major [P,C]
  // True when the prototype has at least one effective nonzero weight.
  bool is_relevant(std::size_t prototype) const;
  double max_effective_weight(std::size_t prototype) const;

  // Trainable parameter [P,C].
  numerics::Tensor& weights() { return weights_; }
  const numerics::Tensor& weights() const { return weights_; }
  // Replaces all stored weights. Rejects negative or wrongly sized input.
  void set_weights(const std::vector<double>& row_major);
  void clamp_nonnegative();

  void disable(std::size_t prototype);
  void enable(std::size_t prototype);
  bool is_disabled(std::size_t prototype) const { return disabled_.count(prototype) != 0; }
  const std::set<std::size_t>& disabled() const { return disabled_; }
  void set_disabled(std::set<std::size_t> ids);

 private:
  void check_prototype(std::size_t prototype) const;

  std::size_t prototypes_ = 0;
  std::size_t classes_ = 0;
  double relevance_epsilon_ = 1e-3;
  numerics::Tensor weights_;
  std::set<std::size_t> disabled_;
};

}  // namespace pipnet::model
