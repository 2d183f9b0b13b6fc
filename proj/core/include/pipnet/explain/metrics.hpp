#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pipnet/model/proto_model.hpp"

namespace pipnet::explain {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

struct Rates {
  double accuracy = 0.0;
  double f1 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Rates with a zero denominator are reported as 0.
Rates rates_from_confusion(const Confusion& confusion);

struct MetricsReport {
  std::size_t count = 0;
  std::size_t positive_class = 1;
  double accuracy = 0.0;
  double f1 = 0.0;  // positive-class F1 when C == 2, macro-F1 otherwise
  double sensitivity = 0.0;
  double specificity = 0.0;
  double sparsity = 0.0;
  std::size_t global_size = 0;
  double mean_local_size = 0.0;
  double abstain_fraction = 0.0;
  Confusion confusion;  // positive class vs rest
};

// Presence above this counts a prototype as found in an image.
inline constexpr double kFoundThreshold = 0.1;

// Fraction of sheet entries whose effective weight is zero.
double sparsity_ratio(const model::ScoringSheet& sheet);
// Number of prototypes with at least one effective nonzero weight.
std::size_t global_size(const model::ScoringSheet& sheet);
// Prototypes found (p > threshold) in this prediction and relevant to any class.
std::size_t local_size(const model::PresenceVector& presence, const model::ScoringSheet& sheet,
                       double threshold = kFoundThreshold);

// Confusion of the positive class against the rest. An abstention is always
// an error: a false negative on a positive item and a false positive on a
// negative one.
Confusion confusion_for(std::span<const model::Prediction> predictions, std::span<const std::size_t> labels,
                        std::size_t positive_class);

// Metrics from predictions already made with `sheet`.
MetricsReport summarize(std::span<const model::Prediction> predictions, std::span<const std::size_t> labels,
                        const model::ScoringSheet& sheet, std::size_t positive_class = 1);

MetricsReport compute_metrics(const model::ProtoModel& model, std::span<const Image> images,
                              std::span<const std::size_t> labels, std::size_t positive_class = 1);

std::string to_json(const MetricsReport& report);

}  // namespace pipnet::explain
