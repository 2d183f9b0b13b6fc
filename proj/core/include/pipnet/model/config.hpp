#pragma once

#include <cstddef>
#include <vector>

#include "pipnet/kv_config.hpp"

namespace pipnet::model {

// One 3x3 convolution stage of the backbone (padding 1).
struct StageSpec {
  std::size_t channels = 0;
  std::size_t stride = 1;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::size_t num_prototypes = 64;
  std::size_t num_classes = 2;
  // Three stride-2 stages then a stride-1 stage: 64 px -> 8x8 grid, D = 128.
  std::vector<StageSpec> backbone{{16, 2}, {32, 2}, {64, 2}, {128, 1}};
  std::size_t patch_scale = 2;
  double relevance_epsilon = 1e-3;
  double abstain_epsilon = 1e-6;
  // Per-channel standardization applied after scaling pixels to [0,1].
  std::vector<double> pixel_mean{0.5, 0.5, 0.5};
  std::vector<double> pixel_std{0.25, 0.25, 0.25};

  std::size_t grid_size() const;
  std::size_t feature_dim() const;

  // Throws InvalidArgument on inconsistent settings.
  void validate() const;

  KeyValueConfig to_kv(const std::string& prefix = "model.") const;
  // Applies any `prefix*` keys of `kv` to this config. Unknown keys under
  // the prefix are rejected.
  void apply(const KeyValueConfig& kv, const std::string& prefix = "model.");

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace pipnet::model
