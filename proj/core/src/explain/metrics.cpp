#include "pipnet/explain/metrics.hpp"

#include "pipnet/error.hpp"

namespace pipnet::explain {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

Rates rates_from_confusion(const Confusion& c) {
  const double tp = double(c.tp), fp = double(c.fp), fn = double(c.fn), tn = double(c.tn);
  Rates r;
  r.accuracy = ratio(tp + tn, tp + fp + fn + tn);
  r.sensitivity = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  return r;
}

double sparsity_ratio(const model::ScoringSheet& sheet) {
  const auto w = sheet.effective_weights();
  if (w.empty()) return 0.0;
  std::size_t zeros = 0;
  for (double v : w) zeros += v == 0.0;
  return double(zeros) / double(w.size());
}

std::size_t global_size(const model::ScoringSheet& sheet) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < sheet.num_prototypes(); ++i) n += sheet.is_relevant(i);
  return n;
}

std::size_t local_size(const model::PresenceVector& presence, const model::ScoringSheet& sheet, double threshold) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < presence.size(); ++i) n += presence.scores[i] > threshold && sheet.is_relevant(i);
  return n;
}

Confusion confusion_for(std::span<const model::Prediction> predictions, std::span<const std::size_t> labels,
                        std::size_t positive_class) {
  if (predictions.size() != labels.size()) throw InvalidArgument("predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const bool positive = labels[i] == positive_class;
    const auto& label = predictions[i].label;
    if (!label) {
      (positive ? c.fn : c.fp) += 1;
    } else if (positive) {
      (*label == positive_class ? c.tp : c.fn) += 1;
    } else {
      (*label == positive_class ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

MetricsReport summarize(std::span<const model::Prediction> predictions, std::span<const std::size_t> labels,
                        const model::ScoringSheet& sheet, std::size_t positive_class) {
  if (predictions.empty()) throw InvalidArgument("metrics need at least one labeled item");
  if (positive_class >= sheet.num_classes()) throw InvalidArgument("positive class out of range");
  MetricsReport r;
  r.count = predictions.size();
  r.positive_class = positive_class;
  r.confusion = confusion_for(predictions, labels, positive_class);
  const Rates rates = rates_from_confusion(r.confusion);
  r.sensitivity = rates.sensitivity;
  r.specificity = rates.specificity;

  std::size_t correct = 0, abstained = 0, local = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    correct += predictions[i].label == labels[i];
    abstained += predictions[i].abstained();
    local += local_size(predictions[i].presence, sheet);
  }
  r.accuracy = double(correct) / double(r.count);
  r.abstain_fraction = double(abstained) / double(r.count);
  r.mean_local_size = double(local) / double(r.count);

  const std::size_t classes = sheet.num_classes();
  if (classes == 2) {
    r.f1 = rates.f1;
  } else {
    // Per-class one-vs-rest; an abstention is a miss for its true class only.
    std::vector<Confusion> per_class(classes);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const auto& label = predictions[i].label;
      if (label == labels[i]) {
        per_class[labels[i]].tp += 1;
        continue;
      }
      if (labels[i] < classes) per_class[labels[i]].fn += 1;
      if (label && *label < classes) per_class[*label].fp += 1;
    }
    double total = 0.0;
    for (const auto& c : per_class) total += rates_from_confusion(c).f1;
    r.f1 = total / double(classes);
  }
  r.sparsity = sparsity_ratio(sheet);
  r.global_size = global_size(sheet);
  return r;
}

MetricsReport compute_metrics(const model::ProtoModel& model, std::span<const Image> images,
                              std::span<const std::size_t> labels, std::size_t positive_class) {
  const auto predictions = model.predict_batch(images);
  return summarize(predictions, labels, model.sheet(), positive_class);
}

}  // namespace pipnet::explain
