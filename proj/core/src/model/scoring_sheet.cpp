#include "pipnet/model/scoring_sheet.hpp"

#include <algorithm>

#include "pipnet/error.hpp"

namespace pipnet::model {

ScoringSheet::ScoringSheet(std::size_t num_prototypes, std::size_t num_classes, double relevance_epsilon)
    : prototypes_(num_prototypes),
      classes_(num_classes),
      relevance_epsilon_(relevance_epsilon),
      weights_(numerics::Tensor::zeros({num_prototypes, num_classes}, true)) {}

ScoringSheet::ScoringSheet(const ScoringSheet& other)
    : prototypes_(other.prototypes_),
      classes_(other.classes_),
      relevance_epsilon_(other.relevance_epsilon_),
      disabled_(other.disabled_) {
  if (other.weights_.defined()) {
    weights_ = other.weights_.clone();
    weights_.set_requires_grad(other.weights_.requires_grad());
  }
}

ScoringSheet& ScoringSheet::operator=(const ScoringSheet& other) {
  if (this != &other) {
    ScoringSheet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ScoringSheet::check_prototype(std::size_t prototype) const {
  if (prototype >= prototypes_) {
    throw InvalidArgument("prototype id " + std::to_string(prototype) + " out of range (P=" +
                          std::to_string(prototypes_) + ")");
  }
}

double ScoringSheet::weight(std::size_t prototype, std::size_t cls) const {
  return weights_.data()[prototype * classes_ + cls];
}

double ScoringSheet::effective_weight(std::size_t prototype, std::size_t cls) const {
  if (disabled_.count(prototype)) return 0.0;
  const double w = weight(prototype, cls);
  return w < relevance_epsilon_ ? 0.0 : w;
}

std::vector<double> ScoringSheet::effective_weights() const {
  std::vector<double> out(prototypes_ * classes_);
  for (std::size_t i = 0; i < prototypes_; ++i)
    for (std::size_t c = 0; c < classes_; ++c) out[i * classes_ + c] = effective_weight(i, c);
  return out;
}

bool ScoringSheet::is_relevant(std::size_t prototype) const { return max_effective_weight(prototype) > 0.0; }

double ScoringSheet::max_effective_weight(std::size_t prototype) const {
  double best = 0.0;
  for (std::size_t c = 0; c < classes_; ++c) best = std::max(best, effective_weight(prototype, c));
  return best;
}

void ScoringSheet::set_weights(const std::vector<double>& row_major) {
  if (row_major.size() != prototypes_ * classes_) {
    throw InvalidArgument("scoring sheet needs " + std::to_string(prototypes_ * classes_) + " weights, got " +
                          std::to_string(row_major.size()));
  }
  for (double w : row_major)
    if (!(w >= 0.0)) throw InvalidArgument("scoring sheet weights must be non-negative");
  std::copy(row_major.begin(), row_major.end(), weights_.mutable_data().begin());
}

void ScoringSheet::clamp_nonnegative() {
  for (double& w : weights_.mutable_data()) w = std::max(w, 0.0);
}

void ScoringSheet::disable(std::size_t prototype) {
  check_prototype(prototype);
  disabled_.insert(prototype);
}

void ScoringSheet::enable(std::size_t prototype) {
  check_prototype(prototype);
  disabled_.erase(prototype);
}

void ScoringSheet::set_disabled(std::set<std::size_t> ids) {
  for (std::size_t id : ids) check_prototype(id);
  disabled_ = std::move(ids);
}

}  // namespace pipnet::model
