#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipnet/data/dataset.hpp"
#include "pipnet/explain/metrics.hpp"
#include "pipnet/model/proto_model.hpp"

namespace pipnet::explain {

enum class PrototypeStatus { Active, Disabled };

std::string to_string(PrototypeStatus status);

// One image region where a prototype fired.
struct PatchRef {
  std::size_t image_index = 0;  // position in the scanned item list
  std::string image_ref;        // dataset-relative path
  Rect rect;
  double score = 0.0;

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

struct PrototypeCard {
  std::size_t id = 0;
  std::vector<double> weights;   // effective weight per class
  std::vector<PatchRef> patches;  // descending score, ties by image index
  PrototypeStatus status = PrototypeStatus::Active;

  double max_weight() const;
};

// Card with weights and status but no patches.
PrototypeCard prototype_card(const model::ProtoModel& model, std::size_t id);

// Ranks the scanned images by the prototype's presence and keeps the k best,
// each with the rectangle of its argmax cell. Works for every prototype,
// including ones with zero class weight.
PrototypeCard top_patches(const model::ProtoModel& model, std::span<const data::DatasetItem> items, std::size_t id,
                          std::size_t k = 10);
// Same, from presence vectors already computed for `items`.
PrototypeCard top_patches(const model::ProtoModel& model, std::span<const model::PresenceVector> presence,
                          std::span<const data::DatasetItem> items, std::size_t id, std::size_t k = 10);
// Cards for every prototype from one scan of the dataset.
std::vector<PrototypeCard> all_top_patches(const model::ProtoModel& model, std::span<const data::DatasetItem> items,
                                           std::size_t k = 10);

// Relevant prototypes (any effective nonzero weight), ordered by their
// largest class weight, descending; ties by id.
std::vector<PrototypeCard> global_explanation(const model::ProtoModel& model);

struct Contribution {
  std::size_t prototype = 0;
  double presence = 0.0;
  model::GridCell cell;
  Rect rect;
  std::vector<double> per_class;  // presence * effective weight
};

// Why an image got its scores. `listed` holds prototypes found
// (p > kFoundThreshold) and relevant; `omitted` sums the contributions of
// every other prototype, so listed + omitted reproduces `scores`.
struct Explanation {
  std::optional<std::size_t> label;
  std::vector<double> scores;
  std::vector<Contribution> listed;
  std::vector<double> omitted;

  bool abstained() const { return !label.has_value(); }
};

Explanation explain_prediction(const model::Prediction& prediction, const model::ProtoModel& model);
Explanation local_explanation(const model::ProtoModel& model, const Image& image);

// Writes <dir>/proto_<id>/<rank>.png crops and <dir>/index.json describing
// every patch (image path, rectangle, score). Returns the index path.
std::filesystem::path export_patches(std::span<const PrototypeCard> cards, std::span<const data::DatasetItem> items,
                                     const std::filesystem::path& dir);

std::string to_json(const PrototypeCard& card);
std::string to_json(const Explanation& explanation);

}  // namespace pipnet::explain
