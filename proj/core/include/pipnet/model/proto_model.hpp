#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipnet/image.hpp"
#include "pipnet/model/config.hpp"
#include "pipnet/model/scoring_sheet.hpp"
#include "pipnet/numerics/ops.hpp"

namespace pipnet::model {

using numerics::GridCell;

// Per-image prototype activation grid z [P,H',W'] (channel-softmax output).
struct FeatureGrid {
  std::size_t prototypes = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t p, std::size_t r, std::size_t c) const { return values[(p * rows + r) * cols + c]; }
};

// Max-pooled presence score per prototype plus where it was found.
struct PresenceVector {
  std::vector<double> scores;
  std::vector<GridCell> locations;

  std::size_t size() const { return scores.size(); }
};

struct Prediction {
  std::vector<double> scores;
  std::optional<std::size_t> label;  // empty means ABSTAIN
  PresenceVector presence;

  bool abstained() const { return !label.has_value(); }
};

struct NamedTensor {
  std::string name;
  numerics::Tensor tensor;
};

// Convolutional backbone -> prototype grid -> presence -> scoring sheet.
//
// Copying a ProtoModel shares the backbone parameters (tensor handles) and
// deep-copies the scoring sheet, so a copy is a cheap snapshot for
// evaluating sheet edits. Use clone() for a fully independent model.
class ProtoModel {
 public:
  explicit ProtoModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  ScoringSheet& sheet() { return sheet_; }
  const ScoringSheet& sheet() const { return sheet_; }

  ProtoModel clone() const;

  // Scales pixels to [0,1], standardizes per channel, stacks to [N,C,H,W].
  numerics::Tensor to_input(std::span<const Image> images) const;
  // Differentiable prototype grid z [N,P,H',W'].
  numerics::Tensor forward_grid(const numerics::Tensor& input) const;
  // Differentiable class scores [N,C] from presence values [N,P], using the
  // trainable weights with disabled rows zeroed.
  numerics::Tensor forward_scores(const numerics::Tensor& presence) const;

  FeatureGrid encode(const Image& image) const;
  std::vector<FeatureGrid> encode_batch(std::span<const Image> images) const;
  std::vector<PresenceVector> presence_batch(std::span<const Image> images, std::size_t chunk = 64) const;

  Prediction predict(const Image& image) const;
  std::vector<Prediction> predict_batch(std::span<const Image> images) const;
  // Multi-image study: presence is the elementwise max of per-image presence.
  Prediction predict_study(std::span<const Image> images) const;

  // Backbone stages and the prototype projection, in a stable order.
  std::vector<NamedTensor> backbone_parameters() const;
  // Backbone parameters followed by "sheet.weights".
  std::vector<NamedTensor> parameters() const;

 private:
  struct Stage {
    numerics::Tensor kernel;  // [Cout,Cin,3,3]
    numerics::Tensor gamma;   // [Cout]
    numerics::Tensor beta;    // [Cout]
    std::size_t stride = 1;
  };

  void check_image(const Image& image) const;

  ModelConfig config_;
  std::vector<Stage> stages_;
  numerics::Tensor prototype_kernel_;  // [P,D,1,1]
  ScoringSheet sheet_;
};

PresenceVector pool_presence(const FeatureGrid& grid);

// scores[c] = sum_i p[i] * W_eff[i,c]; argmax label with lowest-id ties,
// ABSTAIN when every score is below `abstain_epsilon`.
Prediction classify(const PresenceVector& presence, const ScoringSheet& sheet, double abstain_epsilon = 1e-6);

// Image-space rectangle for a grid cell: stride s = image_size / grid,
// side s * patch_scale, clipped to the image.
Rect patch_rectangle(GridCell cell, const ModelConfig& config);

}  // namespace pipnet::model
