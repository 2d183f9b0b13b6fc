#include "pipnet/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "pipnet/data/image_io.hpp"
#include "pipnet/error.hpp"
#include "pipnet/random.hpp"

namespace pipnet::data {

namespace fs = std::filesystem;

namespace {

enum StreamTag : std::uint32_t { kStudy = 1, kImage = 2, kConfound = 3, kArtifact = 4, kCounterfactual = 5 };

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string study_name(std::size_t index) {
  std::string digits = std::to_string(index);
  return "s" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (image_size < 8) throw InvalidArgument("data.image_size must be >= 8");
  if (train_count == 0 || test_count == 0) throw InvalidArgument("data.train_count and data.test_count must be >= 1");
  if (max_study_size == 0) throw InvalidArgument("data.max_study_size must be >= 1");
  if (!(confound_rate >= 0.0 && confound_rate <= 1.0)) throw InvalidArgument("data.confound_rate must be in [0,1]");
  if (!(shape.radius_min > 0.0) || shape.radius_max < shape.radius_min) {
    throw InvalidArgument("data.radius_min/radius_max must satisfy 0 < min <= max");
  }
  if (shape.blob_roughness < 0.0 || shape.blob_amplitude_max + shape.blob_roughness >= 1.0) {
    throw InvalidArgument("data.blob_roughness must be >= 0 with blob_amplitude_max + blob_roughness < 1");
  }
  if (shape.radius_max * (1.0 + std::max(shape.blob_amplitude_max + shape.blob_roughness, shape.disc_jitter)) +
          shape.center_jitter >
      double(image_size) / 2.0) {
    throw InvalidArgument("lesions do not fit inside a " + std::to_string(image_size) + " px image");
  }
  if (shape.blob_amplitude_min < 0.0 || shape.blob_amplitude_max < shape.blob_amplitude_min ||
      shape.blob_amplitude_max >= 1.0) {
    throw InvalidArgument("data.blob_amplitude_min/max must satisfy 0 <= min <= max < 1");
  }
  if (shape.disc_jitter < 0.0 || shape.disc_jitter >= 1.0) throw InvalidArgument("data.disc_jitter must be in [0,1)");
  if (noise_std < 0.0) throw InvalidArgument("data.noise_std must be >= 0");
  place_artifact(artifact, image_size, 0);  // throws if it cannot fit
  if (train_count + test_count < 2) throw InvalidArgument("need at least two images to split");
}

KeyValueConfig SyntheticSpec::to_kv(const std::string& prefix) const {
  KeyValueConfig kv;
  kv.set(prefix + "image_size", std::to_string(image_size));
  kv.set(prefix + "train_count", std::to_string(train_count));
  kv.set(prefix + "test_count", std::to_string(test_count));
  kv.set(prefix + "max_study_size", std::to_string(max_study_size));
  kv.set(prefix + "confound_rate", format_double(confound_rate));
  kv.set(prefix + "artifact_size_fraction", format_double(artifact.size_fraction));
  kv.set(prefix + "artifact_color", std::to_string(artifact.color[0]) + "," + std::to_string(artifact.color[1]) +
                                        "," + std::to_string(artifact.color[2]));
  kv.set(prefix + "artifact_corner", to_string(artifact.corner));
  kv.set(prefix + "artifact_margin", std::to_string(artifact.margin));
  kv.set(prefix + "radius_min", format_double(shape.radius_min));
  kv.set(prefix + "radius_max", format_double(shape.radius_max));
  kv.set(prefix + "center_jitter", format_double(shape.center_jitter));
  kv.set(prefix + "blob_amplitude_min", format_double(shape.blob_amplitude_min));
  kv.set(prefix + "blob_amplitude_max", format_double(shape.blob_amplitude_max));
  kv.set(prefix + "blob_roughness", format_double(shape.blob_roughness));
  kv.set(prefix + "disc_jitter", format_double(shape.disc_jitter));
  kv.set(prefix + "noise_std", format_double(noise_std));
  kv.set(prefix + "seed", std::to_string(seed));
  return kv;
}

void SyntheticSpec::apply(const KeyValueConfig& kv, const std::string& prefix) {
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    if (name == "image_size") image_size = parse_size(key, value);
    else if (name == "train_count") train_count = parse_size(key, value);
    else if (name == "test_count") test_count = parse_size(key, value);
    else if (name == "max_study_size") max_study_size = parse_size(key, value);
    else if (name == "confound_rate") confound_rate = parse_double(key, value);
    else if (name == "artifact_size_fraction") artifact.size_fraction = parse_double(key, value);
    else if (name == "artifact_color") {
      const auto rgb = parse_size_list(key, value);
      if (rgb.size() != 3 || *std::max_element(rgb.begin(), rgb.end()) > 255) {
        throw InvalidArgument(key + " must be three values in 0..255");
      }
      for (std::size_t i = 0; i < 3; ++i) artifact.color[i] = static_cast<std::uint8_t>(rgb[i]);
    }
    else if (name == "artifact_corner") artifact.corner = corner_from_string(value);
    else if (name == "artifact_margin") artifact.margin = parse_size(key, value);
    else if (name == "radius_min") shape.radius_min = parse_double(key, value);
    else if (name == "radius_max") shape.radius_max = parse_double(key, value);
    else if (name == "center_jitter") shape.center_jitter = parse_double(key, value);
    else if (name == "blob_amplitude_min") shape.blob_amplitude_min = parse_double(key, value);
    else if (name == "blob_amplitude_max") shape.blob_amplitude_max = parse_double(key, value);
    else if (name == "blob_roughness") shape.blob_roughness = parse_double(key, value);
    else if (name == "disc_jitter") shape.disc_jitter = parse_double(key, value);
    else if (name == "noise_std") noise_std = parse_double(key, value);
    else if (name == "seed") seed = parse_u64(key, value);
    else throw InvalidArgument("unknown config key '" + key + "'");
  }
}

SyntheticSpec SyntheticSpec::tiny() {
  SyntheticSpec spec;
  spec.train_count = 48;
  spec.test_count = 16;
  return spec;
}

Image render_lesion(std::size_t label, const SyntheticSpec& spec, std::mt19937_64& rng) {
  constexpr double kPi = std::numbers::pi;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const ShapeSpec& shape = spec.shape;
  const double size = double(spec.image_size);

  // Boundary radius as a function of angle. Class 0 walks the radius in
  // kWalkSteps random steps around the perimeter (drift removed so it closes),
  // adds independent per-vertex jitter and interpolates linearly, which
  // leaves sharp corners; class 1 is a disc with a mild elliptical wobble.
  constexpr std::size_t kWalkSteps = 48;
  const double radius = uniform(shape.radius_min, shape.radius_max);
  std::vector<double> walk;
  double wobble = 0.0, wobble_phase = 0.0;
  if (label == 0) {
    std::normal_distribution<double> step(0.0, 1.0);
    walk.assign(kWalkSteps + 1, 0.0);
    for (std::size_t k = 1; k <= kWalkSteps; ++k) walk[k] = walk[k - 1] + step(rng);
    const double drift = walk[kWalkSteps] / double(kWalkSteps);
    for (std::size_t k = 0; k <= kWalkSteps; ++k) walk[k] -= drift * double(k);
    const double mean = std::accumulate(walk.begin(), walk.end() - 1, 0.0) / double(kWalkSteps);
    double peak = 0.0;
    for (auto& w : walk) {
      w -= mean;
      peak = std::max(peak, std::abs(w));
    }
    const double total = uniform(shape.blob_amplitude_min, shape.blob_amplitude_max);
    for (auto& w : walk) w *= peak > 0.0 ? total / peak : 0.0;
    for (std::size_t k = 0; k < kWalkSteps; ++k) walk[k] += uniform(-shape.blob_roughness, shape.blob_roughness);
    walk[kWalkSteps] = walk[0];
  } else {
    wobble = uniform(0.0, shape.disc_jitter);
    wobble_phase = uniform(0.0, 2.0 * kPi);
  }
  auto boundary_at = [&](double theta) {
    if (walk.empty()) return radius * (1.0 + wobble * std::cos(2.0 * theta + wobble_phase));
    const double t = (theta + kPi) / (2.0 * kPi) * double(kWalkSteps);
    const std::size_t k = std::min<std::size_t>(std::size_t(t), kWalkSteps - 1);
    const double f = t - double(k);
    return radius * (1.0 + (1.0 - f) * walk[k] + f * walk[k + 1]);
  };
  const double cy = size / 2.0 + uniform(-shape.center_jitter, shape.center_jitter);
  const double cx = size / 2.0 + uniform(-shape.center_jitter, shape.center_jitter);

  std::array<double, 3> skin{uniform(200, 230), uniform(150, 185), uniform(120, 160)};
  const double lesion_dark = uniform(0.45, 0.62);
  std::array<double, 3> lesion{skin[0] * lesion_dark, skin[1] * lesion_dark * uniform(0.85, 0.95),
                               skin[2] * lesion_dark * uniform(0.8, 0.95)};
  const double grad_amp = uniform(0.0, 10.0), grad_angle = uniform(0.0, 2.0 * kPi);
  const double grad_freq = uniform(0.5, 1.5) * 2.0 * kPi / size, grad_phase = uniform(0.0, 2.0 * kPi);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  Image image(spec.image_size, spec.image_size, 3);
  for (std::size_t r = 0; r < spec.image_size; ++r)
    for (std::size_t c = 0; c < spec.image_size; ++c) {
      const double y = double(r) + 0.5 - cy, x = double(c) + 0.5 - cx;
      const double dist = std::hypot(x, y), theta = std::atan2(y, x);
      const double boundary = boundary_at(theta);
      const double alpha = std::clamp(boundary - dist + 0.5, 0.0, 1.0);
      const double shade = 0.85 + 0.15 * std::min(dist / boundary, 1.0);
      const double along = x * std::cos(grad_angle) + y * std::sin(grad_angle);
      const double background_shift = grad_amp * std::sin(grad_freq * along + grad_phase);
      const double n = noise(rng);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double bg = skin[ch] + background_shift;
        const double fg = lesion[ch] * shade;
        image.at(r, c, ch) = to_byte(alpha * fg + (1.0 - alpha) * bg + n);
      }
    }
  return image;
}

Dataset generate_items(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t total = spec.train_count + spec.test_count;

  // Studies of 1..max_study_size same-label images.
  std::vector<DatasetItem> items;
  std::vector<std::size_t> index_in_study;
  for (std::size_t study = 0; items.size() < total; ++study) {
    auto rng = stream_rng(spec.seed, study, kStudy);
    const std::size_t label = rng() % 2;
    const std::size_t count = std::min<std::size_t>(1 + rng() % spec.max_study_size, total - items.size());
    for (std::size_t n = 0; n < count; ++n) {
      auto image_rng = stream_rng(spec.seed, items.size(), kImage);
      DatasetItem item;
      item.image = render_lesion(label, spec, image_rng);
      item.label = label;
      item.study_id = study_name(study);
      items.push_back(std::move(item));
      index_in_study.push_back(n);
    }
  }

  const double fraction = double(spec.test_count) / double(total);
  const SplitManifest split = split_by_study(items, fraction, spec.seed);
  auto relpath = [&](const std::string& dir, std::size_t i) {
    return dir + "/" + std::to_string(items[i].label) + "/" + items[i].study_id + "_" +
           std::to_string(index_in_study[i]) + ".png";
  };

  Dataset ds;
  ds.num_classes = 2;

  // Exactly round(rate * |class-1 train|) confounded training images.
  std::vector<std::size_t> positives;
  for (std::size_t i : split.train_ids)
    if (items[i].label == 1) positives.push_back(i);
  auto confound_rng = stream_rng(spec.seed, 0, kConfound);
  std::shuffle(positives.begin(), positives.end(), confound_rng);
  const auto n_artifacts = static_cast<std::size_t>(std::lround(spec.confound_rate * double(positives.size())));
  std::vector<bool> confounded(items.size(), false);
  for (std::size_t k = 0; k < n_artifacts; ++k) confounded[positives[k]] = true;

  for (std::size_t i : split.train_ids) {
    DatasetItem item = items[i];
    item.relpath = relpath("train", i);
    if (confounded[i]) {
      auto result = insert_artifact(item.image, place_artifact(spec.artifact, spec.image_size,
                                                               stream_rng(spec.seed, i, kArtifact)()));
      item.image = std::move(result.image);
      item.mask = std::move(result.mask);
    }
    ds.train.push_back(std::move(item));
  }
  for (std::size_t i : split.test_ids) {
    DatasetItem item = items[i];
    item.relpath = relpath("test", i);
    if (item.label == 0) {
      DatasetItem cf = item;
      cf.relpath = relpath("counterfactual", i);
      auto result = insert_artifact(cf.image, place_artifact(spec.artifact, spec.image_size,
                                                             stream_rng(spec.seed, i, kCounterfactual)()));
      cf.image = std::move(result.image);
      cf.mask = std::move(result.mask);
      ds.counterfactual.push_back(std::move(cf));
    }
    ds.test.push_back(std::move(item));
  }
  return ds;
}

Dataset generate(const SyntheticSpec& spec, const fs::path& root) {
  Dataset ds = generate_items(spec);
  ds.root = root;
  std::vector<ManifestEntry> manifest;
  for (const auto* split : {&ds.train, &ds.test, &ds.counterfactual})
    for (const auto& item : *split) {
      const fs::path path = root / item.relpath;
      fs::create_directories(path.parent_path());
      write_png(path, item.image);
      if (item.mask) {
        const fs::path mask_path = root / "masks" / item.relpath;
        fs::create_directories(mask_path.parent_path());
        write_png(mask_path, *item.mask);
      }
      manifest.push_back({item.relpath, item.label, item.study_id, item.has_artifact()});
    }
  std::ofstream out(root / "manifest", std::ios::binary);
  out << format_manifest(manifest);
  if (!out) throw IoError("cannot write manifest under " + root.string());
  spec.to_kv().save(root / "spec.cfg");
  return ds;
}

}  // namespace pipnet::data
