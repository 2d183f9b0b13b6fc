#include "pipnet/model/proto_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pipnet/error.hpp"

namespace pipnet::model {

namespace nx = pipnet::numerics;

namespace {

nx::Tensor normal_tensor(nx::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(nx::shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return nx::Tensor::from_data(std::move(shape), std::move(values), true);
}

}  // namespace

ProtoModel::ProtoModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = config_.in_channels;
  for (const auto& spec : config_.backbone) {
    Stage stage;
    stage.kernel = normal_tensor({spec.channels, in, 3, 3}, std::sqrt(2.0 / double(in * 9)), rng);
    stage.gamma = nx::Tensor::full({spec.channels}, 1.0, true);
    stage.beta = nx::Tensor::zeros({spec.channels}, true);
    stage.stride = spec.stride;
    stages_.push_back(std::move(stage));
    in = spec.channels;
  }
  prototype_kernel_ = normal_tensor({config_.num_prototypes, in, 1, 1}, 1.0 / std::sqrt(double(in)), rng);
  sheet_ = ScoringSheet(config_.num_prototypes, config_.num_classes, config_.relevance_epsilon);
}

ProtoModel ProtoModel::clone() const {
  ProtoModel copy = *this;
  auto deep = [](const nx::Tensor& t) {
    nx::Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  for (auto& stage : copy.stages_) {
    stage.kernel = deep(stage.kernel);
    stage.gamma = deep(stage.gamma);
    stage.beta = deep(stage.beta);
  }
  copy.prototype_kernel_ = deep(prototype_kernel_);
  return copy;
}

void ProtoModel::check_image(const Image& image) const {
  if (image.height != config_.image_size || image.width != config_.image_size ||
      image.channels != config_.in_channels) {
    throw InvalidArgument("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                          std::to_string(image.channels) + ", model expects " + std::to_string(config_.image_size) +
                          "x" + std::to_string(config_.image_size) + "x" + std::to_string(config_.in_channels));
  }
}

nx::Tensor ProtoModel::to_input(std::span<const Image> images) const {
  const std::size_t size = config_.image_size, ch = config_.in_channels, plane = size * size;
  std::vector<double> values(images.size() * ch * plane);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& image = images[n];
    check_image(image);
    for (std::size_t c = 0; c < ch; ++c) {
      const double mu = config_.pixel_mean[c], inv = 1.0 / config_.pixel_std[c];
      double* dst = values.data() + (n * ch + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = (double(image.pixels[i * ch + c]) / 255.0 - mu) * inv;
    }
  }
  return nx::Tensor::from_data({images.size(), ch, size, size}, std::move(values));
}

nx::Tensor ProtoModel::forward_grid(const nx::Tensor& input) const {
  nx::Tensor x = input;
  for (const auto& stage : stages_) {
    x = nx::conv2d(x, stage.kernel, stage.stride, 1);
    x = nx::channel_layer_norm(x, stage.gamma, stage.beta);
    x = nx::gelu(x);
  }
  return nx::softmax_channel(nx::conv2d(x, prototype_kernel_, 1, 0));
}

nx::Tensor ProtoModel::forward_scores(const nx::Tensor& presence) const {
  const nx::Tensor& w = sheet_.weights();
  if (sheet_.disabled().empty()) return nx::matmul(presence, w);
  std::vector<double> mask(w.numel(), 1.0);
  for (std::size_t id : sheet_.disabled())
    for (std::size_t c = 0; c < sheet_.num_classes(); ++c) mask[id * sheet_.num_classes() + c] = 0.0;
  return nx::matmul(presence, nx::mul(w, nx::Tensor::from_data(w.shape(), std::move(mask))));
}

std::vector<FeatureGrid> ProtoModel::encode_batch(std::span<const Image> images) const {
  if (images.empty()) return {};
  nx::NoGradGuard no_grad;
  const nx::Tensor z = forward_grid(to_input(images));
  const std::size_t p = z.dim(1), rows = z.dim(2), cols = z.dim(3), per = p * rows * cols;
  std::vector<FeatureGrid> grids(images.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    grids[n] = FeatureGrid{p, rows, cols, std::vector<double>(z.data().begin() + n * per, z.data().begin() + (n + 1) * per)};
  }
  return grids;
}

FeatureGrid ProtoModel::encode(const Image& image) const { return encode_batch(std::span(&image, 1)).front(); }

std::vector<PresenceVector> ProtoModel::presence_batch(std::span<const Image> images, std::size_t chunk) const {
  std::vector<PresenceVector> out;
  out.reserve(images.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t end = std::min(images.size(), begin + chunk);
    for (const auto& grid : encode_batch(images.subspan(begin, end - begin))) out.push_back(pool_presence(grid));
  }
  return out;
}

Prediction ProtoModel::predict(const Image& image) const {
  return classify(pool_presence(encode(image)), sheet_, config_.abstain_epsilon);
}

std::vector<Prediction> ProtoModel::predict_batch(std::span<const Image> images) const {
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (auto& presence : presence_batch(images)) out.push_back(classify(presence, sheet_, config_.abstain_epsilon));
  return out;
}

Prediction ProtoModel::predict_study(std::span<const Image> images) const {
  if (images.empty()) throw InvalidArgument("predict_study needs at least one image");
  const auto per_image = presence_batch(images);
  PresenceVector study = per_image.front();
  for (std::size_t n = 1; n < per_image.size(); ++n)
    for (std::size_t i = 0; i < study.size(); ++i)
      if (per_image[n].scores[i] > study.scores[i]) {
        study.scores[i] = per_image[n].scores[i];
        study.locations[i] = per_image[n].locations[i];
      }
  return classify(study, sheet_, config_.abstain_epsilon);
}

std::vector<NamedTensor> ProtoModel::backbone_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string prefix = "stage" + std::to_string(i) + ".";
    out.push_back({prefix + "kernel", stages_[i].kernel});
    out.push_back({prefix + "gamma", stages_[i].gamma});
    out.push_back({prefix + "beta", stages_[i].beta});
  }
  out.push_back({"prototypes.kernel", prototype_kernel_});
  return out;
}

std::vector<NamedTensor> ProtoModel::parameters() const {
  auto out = backbone_parameters();
  out.push_back({"sheet.weights", sheet_.weights()});
  return out;
}

PresenceVector pool_presence(const FeatureGrid& grid) {
  if (grid.rows == 0 || grid.cols == 0) throw InvalidArgument("pool_presence on empty grid");
  PresenceVector out;
  out.scores.resize(grid.prototypes);
  out.locations.resize(grid.prototypes);
  const std::size_t plane = grid.rows * grid.cols;
  for (std::size_t p = 0; p < grid.prototypes; ++p) {
    const double* src = grid.values.data() + p * plane;
    std::size_t best = 0;
    for (std::size_t l = 1; l < plane; ++l)
      if (src[l] > src[best]) best = l;
    out.scores[p] = src[best];
    out.locations[p] = GridCell{best / grid.cols, best % grid.cols};
  }
  return out;
}

Prediction classify(const PresenceVector& presence, const ScoringSheet& sheet, double abstain_epsilon) {
  if (presence.size() != sheet.num_prototypes()) {
    throw InvalidArgument("presence has " + std::to_string(presence.size()) + " entries, sheet has " +
                          std::to_string(sheet.num_prototypes()) + " prototypes");
  }
  Prediction out;
  out.scores.assign(sheet.num_classes(), 0.0);
  for (std::size_t i = 0; i < presence.size(); ++i) {
    if (presence.scores[i] == 0.0) continue;
    for (std::size_t c = 0; c < sheet.num_classes(); ++c)
      out.scores[c] += presence.scores[i] * sheet.effective_weight(i, c);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < out.scores.size(); ++c)
    if (out.scores[c] > out.scores[best]) best = c;
  const bool any = std::any_of(out.scores.begin(), out.scores.end(), [&](double s) { return s >= abstain_epsilon; });
  if (any) out.label = best;
  out.presence = presence;
  return out;
}

Rect patch_rectangle(GridCell cell, const ModelConfig& config) {
  const std::size_t grid = config.grid_size();
  if (cell.row >= grid || cell.col >= grid) {
    throw InvalidArgument("grid cell (" + std::to_string(cell.row) + "," + std::to_string(cell.col) +
                          ") outside " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  const std::size_t stride = config.image_size / grid;
  const std::size_t side = stride * config.patch_scale;
  const std::size_t size = config.image_size;
  return Rect{cell.row * stride, cell.col * stride, std::min(cell.row * stride + side, size),
              std::min(cell.col * stride + side, size)};
}

}  // namespace pipnet::model
