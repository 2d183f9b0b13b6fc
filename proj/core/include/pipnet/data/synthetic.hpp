#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "pipnet/data/artifact.hpp"
#include "pipnet/data/dataset.hpp"
#include "pipnet/kv_config.hpp"

namespace pipnet::data {

// Class 0: lesion whose perimeter is a closed random walk in radius, with
// sharp corners. Class 1: anti-aliased disc with a mild elliptical wobble.
struct ShapeSpec {
  double radius_min = 13.0;
  double radius_max = 18.0;
  double center_jitter = 6.0;
  double blob_amplitude_min = 0.15;  // peak relative radius deviation for class 0
  double blob_amplitude_max = 0.30;
  double blob_roughness = 0.12;  // per-vertex relative radius jitter for class 0
  double disc_jitter = 0.06;  // max relative wobble for class 1
};

struct SyntheticSpec {
  std::size_t image_size = 64;
  std::size_t train_count = 2000;  // approximate; the split is made per study
  std::size_t test_count = 600;
  std::size_t max_study_size = 3;
  double confound_rate = 0.5;
  ArtifactDescriptor artifact;
  ShapeSpec shape;
  double noise_std = 6.0;  // per-pixel background texture noise, 8-bit units
  std::uint64_t seed = 7;

  void validate() const;
  KeyValueConfig to_kv(const std::string& prefix = "data.") const;
  // Overwrites fields present in `kv` under `prefix`; unknown keys throw.
  void apply(const KeyValueConfig& kv, const std::string& prefix = "data.");

  // Small preset for tests and smoke runs.
  static SyntheticSpec tiny();
};

// Draws one clean lesion image of the given class.
Image render_lesion(std::size_t label, const SyntheticSpec& spec, std::mt19937_64& rng);

// Builds the whole dataset in memory (root left empty). Pure function of
// `spec`: per-study and per-image randomness come from independent
// streams keyed by index.
Dataset generate_items(const SyntheticSpec& spec);

// generate_items + write images, masks and manifest under `root`; the
// generator settings are saved as `root/spec.cfg`. Returns the in-memory dataset.
Dataset generate(const SyntheticSpec& spec, const std::filesystem::path& root);

}  // namespace pipnet::data
