#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pipnet/image.hpp"

namespace pipnet::data {

struct DatasetItem {
  std::string relpath;  // e.g. "train/1/s00012_0.png"
  Image image;
  std::size_t label = 0;
  std::string study_id;
  std::optional<Mask> mask;  // present iff an artifact was placed

  bool has_artifact() const { return mask.has_value(); }
};

// A generated dataset loaded from disk, grouped by split.
struct Dataset {
  std::filesystem::path root;
  std::size_t num_classes = 2;
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> test;
  std::vector<DatasetItem> counterfactual;

  // "train", "test" or "counterfactual".
  const std::vector<DatasetItem>& split(const std::string& name) const;
};

struct ManifestEntry {
  std::string relpath;
  std::size_t label = 0;
  std::string study_id;
  bool has_artifact = false;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// One line per item: <relpath>,<label>,<study_id>,<has_artifact 0|1>.
std::string format_manifest(std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> parse_manifest(const std::string& text);

// Reads the manifest and every referenced image and mask under `root`.
// Masks live at masks/<relpath>.
Dataset load_dataset(const std::filesystem::path& root);

// Helpers over item lists.
std::vector<Image> images_of(std::span<const DatasetItem> items);
std::vector<std::size_t> labels_of(std::span<const DatasetItem> items);

struct SplitManifest {
  std::vector<std::size_t> train_ids;  // indices into the item list
  std::vector<std::size_t> test_ids;
  std::uint64_t seed = 0;
  double fraction = 0.0;  // share of studies sent to test
};

// Partitions studies (not images) so no study spans both splits. The test
// side receives round(fraction * #studies) studies, clamped to [1, #studies-1].
SplitManifest split_by_study(std::span<const DatasetItem> items, double fraction, std::uint64_t seed);

}  // namespace pipnet::data
