#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipnet/data/artifact.hpp"
#include "pipnet/data/dataset.hpp"
#include "pipnet/explain/metrics.hpp"
#include "pipnet/model/proto_model.hpp"

namespace pipnet::debug {

struct PrototypeOverlap {
  std::size_t prototype = 0;
  std::size_t activations = 0;  // images with p > presence threshold
  std::size_t overlaps = 0;     // of those, argmax patch touching the mask
  double overlap_fraction = 0.0;
  bool flagged = false;
};

struct ShortcutReport {
  double presence_threshold = 0.1;
  double overlap_threshold = 0.2;
  std::vector<PrototypeOverlap> prototypes;

  std::vector<std::size_t> flagged() const;
};

// A prototype is flagged when it was found at least once and the share of
// its activations whose argmax patch rectangle intersects an artifact mask
// (by one pixel or more) reaches `overlap_threshold`. Items without a mask
// count as non-overlapping. Throws when no item carries a mask.
ShortcutReport detect_shortcuts(const model::ProtoModel& model, std::span<const data::DatasetItem> items,
                                double presence_threshold = 0.1, double overlap_threshold = 0.2);
ShortcutReport detect_shortcuts(const model::ProtoModel& model, std::span<const model::PresenceVector> presence,
                                std::span<const data::DatasetItem> items, double presence_threshold = 0.1,
                                double overlap_threshold = 0.2);

enum class Action { Disable, Enable };

std::string to_string(Action action);
Action action_from_string(const std::string& name);

struct InterventionEntry {
  std::string timestamp;  // UTC, ISO 8601
  std::size_t prototype = 0;
  Action action = Action::Disable;
  std::string actor;
  std::string metrics_before;  // free-form reference, e.g. "v3"
  std::string metrics_after;

  friend bool operator==(const InterventionEntry&, const InterventionEntry&) = default;
};

// Ordered audit trail of disable/enable actions. When attached to a file,
// every append is also written there as one JSON line. Thread-safe.
class InterventionLog {
 public:
  InterventionLog() = default;
  // Loads existing entries (if the file exists) and appends to it from now on.
  static InterventionLog open(const std::filesystem::path& path);
  static InterventionLog parse_jsonl(const std::string& text);

  InterventionLog(const InterventionLog& other);
  InterventionLog& operator=(const InterventionLog& other);

  void append(InterventionEntry entry);
  std::vector<InterventionEntry> entries() const;
  std::size_t size() const;
  std::string to_jsonl() const;
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  mutable std::mutex mutex_;
  std::vector<InterventionEntry> entries_;
  std::optional<std::filesystem::path> path_;
};

std::string utc_timestamp();

// Soft-disables each id (original weights are kept) and logs one entry per id.
void disable(model::ProtoModel& model, std::span<const std::size_t> ids, InterventionLog& log,
             const std::string& actor = "cli", const std::string& metrics_before = "",
             const std::string& metrics_after = "");
void enable(model::ProtoModel& model, std::span<const std::size_t> ids, InterventionLog& log,
            const std::string& actor = "cli", const std::string& metrics_before = "",
            const std::string& metrics_after = "");

// Applies the log in order to a copy of `base`.
model::ProtoModel replay(const model::ProtoModel& base, const InterventionLog& log);

struct CounterfactualRow {
  std::string name;
  std::size_t count = 0;
  explain::MetricsReport original;
  explain::MetricsReport adapted;
};

struct CounterfactualReport {
  std::size_t target_class = 1;  // the class the artifact is confounded with
  std::vector<std::size_t> disabled;  // prototypes disabled for the adapted model
  data::ArtifactDescriptor artifact;
  // full test set, excluding artifacted, target class with artifacts,
  // other classes with inserted artifacts
  std::vector<CounterfactualRow> rows;

  const CounterfactualRow& row(const std::string& name) const;
};

// Evaluates the current model and a copy with `adapt_ids` additionally
// disabled. Artifacted rows insert the artifact into every clean test image
// of the relevant classes; images that already carry one are used as is.
// Corners are drawn per item from `seed`.
CounterfactualReport counterfactual_eval(const model::ProtoModel& model, std::span<const data::DatasetItem> test,
                                         const data::ArtifactDescriptor& artifact, std::size_t target_class,
                                         std::span<const std::size_t> adapt_ids, std::uint64_t seed = 0,
                                         std::size_t positive_class = 1);

struct AbstentionReport {
  std::size_t count = 0;
  double fraction = 0.0;
  std::vector<std::size_t> indices;
  std::vector<std::string> refs;
};

AbstentionReport abstention_report(const model::ProtoModel& model, std::span<const data::DatasetItem> items);

std::string to_json(const ShortcutReport& report);
std::string to_json(const CounterfactualReport& report);
std::string to_json(const AbstentionReport& report);

}  // namespace pipnet::debug
