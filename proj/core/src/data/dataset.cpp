#include "pipnet/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "pipnet/data/image_io.hpp"
#include "pipnet/error.hpp"
#include "pipnet/kv_config.hpp"

namespace pipnet::data {

namespace fs = std::filesystem;

const std::vector<DatasetItem>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  if (name == "counterfactual") return counterfactual;
  throw InvalidArgument("unknown dataset split '" + name + "'");
}

std::string format_manifest(std::span<const ManifestEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    if (e.relpath.find(',') != std::string::npos || e.study_id.find(',') != std::string::npos) {
      throw InvalidArgument("manifest fields may not contain commas");
    }
    out += e.relpath + "," + std::to_string(e.label) + "," + e.study_id + "," + (e.has_artifact ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text) {
  std::vector<ManifestEntry> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 4) {
      throw IoError("manifest line " + std::to_string(line_no) + ": expected 4 fields, got " +
                    std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.relpath = fields[0];
    e.label = parse_size("manifest label", fields[1]);
    e.study_id = fields[2];
    e.has_artifact = parse_bool("manifest has_artifact", fields[3]);
    entries.push_back(std::move(e));
  }
  return entries;
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest");
  if (!in) throw IoError("no manifest in dataset directory " + root.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Dataset ds;
  ds.root = root;
  std::size_t max_label = 0;
  for (const auto& e : parse_manifest(buffer.str())) {
    DatasetItem item;
    item.relpath = e.relpath;
    item.label = e.label;
    item.study_id = e.study_id;
    item.image = read_png(root / e.relpath);
    if (e.has_artifact) item.mask = read_png(root / "masks" / e.relpath);
    max_label = std::max(max_label, e.label);
    const std::string split = e.relpath.substr(0, e.relpath.find('/'));
    if (split == "train") ds.train.push_back(std::move(item));
    else if (split == "test") ds.test.push_back(std::move(item));
    else if (split == "counterfactual") ds.counterfactual.push_back(std::move(item));
    else throw IoError("manifest path '" + e.relpath + "' is not under train/, test/ or counterfactual/");
  }
  ds.num_classes = std::max<std::size_t>(2, max_label + 1);
  return ds;
}

std::vector<Image> images_of(std::span<const DatasetItem> items) {
  std::vector<Image> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.image);
  return out;
}

std::vector<std::size_t> labels_of(std::span<const DatasetItem> items) {
  std::vector<std::size_t> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.label);
  return out;
}

SplitManifest split_by_study(std::span<const DatasetItem> items, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("split fraction must be in (0,1)");
  std::set<std::string> unique;
  for (const auto& item : items) {
    if (item.study_id.empty()) throw InvalidArgument("item " + item.relpath + " has no study id");
    unique.insert(item.study_id);
  }
  if (unique.size() < 2) {
    throw InvalidArgument("need at least 2 studies to split, got " + std::to_string(unique.size()));
  }
  std::vector<std::string> studies(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  std::shuffle(studies.begin(), studies.end(), rng);
  auto n_test = static_cast<std::size_t>(std::lround(fraction * double(studies.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, studies.size() - 1);
  const std::set<std::string> test_studies(studies.begin(), studies.begin() + std::ptrdiff_t(n_test));

  SplitManifest out;
  out.seed = seed;
  out.fraction = fraction;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (test_studies.count(items[i].study_id) ? out.test_ids : out.train_ids).push_back(i);
  }
  return out;
}

}  // namespace pipnet::data
