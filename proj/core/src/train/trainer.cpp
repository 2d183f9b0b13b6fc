#include "pipnet/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "pipnet/error.hpp"
#include "pipnet/explain/metrics.hpp"
#include "pipnet/random.hpp"
#include "pipnet/train/sampler.hpp"

namespace pipnet::train {

namespace nx = pipnet::numerics;

namespace {

enum StreamTag : std::uint32_t { kPretrainOrder = 11, kPretrainAugment = 12, kSheetInit = 13, kTrainSampler = 14,
                                 kTrainAugment = 15 };

void check_finite(double loss, const std::string& stage, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw Error(stage + " loss is not finite at update " + std::to_string(step));
  }
}

nx::Tensor stack_pair_inputs(const model::ProtoModel& model, const std::vector<Image>& a, const std::vector<Image>& b) {
  std::vector<Image> all;
  all.reserve(a.size() + b.size());
  all.insert(all.end(), a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  return model.to_input(all);
}

void init_sheet(model::ScoringSheet& sheet, SheetInit init, std::uint64_t seed) {
  if (init == SheetInit::Keep) return;
  std::vector<double> w(sheet.num_prototypes() * sheet.num_classes(), 0.0);
  if (init == SheetInit::Normal) {
    auto rng = stream_rng(seed, 0, kSheetInit);
    std::normal_distribution<double> dist(1.0, 0.1);
    for (auto& v : w) v = std::max(0.0, dist(rng));
  }
  sheet.set_weights(w);
}

}  // namespace

std::string to_string(SheetInit init) {
  switch (init) {
    case SheetInit::Normal: return "normal";
    case SheetInit::Zero: return "zero";
    case SheetInit::Keep: return "keep";
  }
  return "normal";
}

SheetInit sheet_init_from_string(const std::string& name) {
  for (SheetInit s : {SheetInit::Normal, SheetInit::Zero, SheetInit::Keep})
    if (to_string(s) == name) return s;
  throw InvalidArgument("unknown sheet init '" + name + "' (expected normal, zero or keep)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (!(lr_head > 0.0) || !(lr_backbone > 0.0) || !(lr_pretrain > 0.0)) {
    throw InvalidArgument("train learning rates must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("train.momentum must be in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw InvalidArgument("train.adam_beta2 must be in [0,1)");
  if (grad_clip < 0.0) throw InvalidArgument("train.grad_clip must be >= 0");
  if (batch_size == 0) throw InvalidArgument("train.batch_size must be >= 1");
  if (align_weight < 0.0 || anticollapse_weight < 0.0 || sparsity_bias < 0.0) {
    throw InvalidArgument("train loss coefficients must be >= 0");
  }
  if (!(eval_fraction > 0.0 && eval_fraction <= 1.0)) throw InvalidArgument("train.eval_fraction must be in (0,1]");
  if (augment.flip_prob < 0.0 || augment.flip_prob > 1.0) throw InvalidArgument("train.augment_flip_prob must be in [0,1]");
  if (!(augment.min_crop > 0.0 && augment.min_crop <= 1.0)) throw InvalidArgument("train.augment_min_crop must be in (0,1]");
  if (augment.max_rotation_deg < 0.0 || augment.brightness < 0.0 || augment.contrast < 0.0 || augment.contrast >= 1.0) {
    throw InvalidArgument("train.augment ranges must be non-negative (contrast < 1)");
  }
}

KeyValueConfig TrainConfig::to_kv(const std::string& prefix) const {
  KeyValueConfig kv;
  kv.set(prefix + "lr_head", format_double(lr_head));
  kv.set(prefix + "lr_backbone", format_double(lr_backbone));
  kv.set(prefix + "lr_pretrain", format_double(lr_pretrain));
  kv.set(prefix + "momentum", format_double(momentum));
  kv.set(prefix + "adam_beta2", format_double(adam_beta2));
  kv.set(prefix + "pretrain_optimizer", to_string(pretrain_optimizer));
  kv.set(prefix + "optimizer", to_string(optimizer));
  kv.set(prefix + "grad_clip", format_double(grad_clip));
  kv.set(prefix + "batch_size", std::to_string(batch_size));
  kv.set(prefix + "pretrain_updates", std::to_string(pretrain_updates));
  kv.set(prefix + "train_updates", std::to_string(train_updates));
  kv.set(prefix + "align_weight", format_double(align_weight));
  kv.set(prefix + "anticollapse_weight", format_double(anticollapse_weight));
  kv.set(prefix + "align_ramp", align_ramp ? "true" : "false");
  kv.set(prefix + "sparsity_bias", format_double(sparsity_bias));
  kv.set(prefix + "sheet_init", to_string(sheet_init));
  kv.set(prefix + "augment_classifier", augment_classifier ? "true" : "false");
  kv.set(prefix + "eval_fraction", format_double(eval_fraction));
  kv.set(prefix + "positive_class", std::to_string(positive_class));
  kv.set(prefix + "augment_flip_prob", format_double(augment.flip_prob));
  kv.set(prefix + "augment_max_rotation_deg", format_double(augment.max_rotation_deg));
  kv.set(prefix + "augment_min_crop", format_double(augment.min_crop));
  kv.set(prefix + "augment_brightness", format_double(augment.brightness));
  kv.set(prefix + "augment_contrast", format_double(augment.contrast));
  kv.set(prefix + "seed", std::to_string(seed));
  return kv;
}

void TrainConfig::apply(const KeyValueConfig& kv, const std::string& prefix) {
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    if (name == "lr_head") lr_head = parse_double(key, value);
    else if (name == "lr_backbone") lr_backbone = parse_double(key, value);
    else if (name == "lr_pretrain") lr_pretrain = parse_double(key, value);
    else if (name == "momentum") momentum = parse_double(key, value);
    else if (name == "adam_beta2") adam_beta2 = parse_double(key, value);
    else if (name == "pretrain_optimizer") pretrain_optimizer = optimizer_from_string(value);
    else if (name == "optimizer") optimizer = optimizer_from_string(value);
    else if (name == "grad_clip") grad_clip = parse_double(key, value);
    else if (name == "batch_size") batch_size = parse_size(key, value);
    else if (name == "pretrain_updates") pretrain_updates = parse_size(key, value);
    else if (name == "train_updates") train_updates = parse_size(key, value);
    else if (name == "align_weight") align_weight = parse_double(key, value);
    else if (name == "anticollapse_weight") anticollapse_weight = parse_double(key, value);
    else if (name == "align_ramp") align_ramp = parse_bool(key, value);
    else if (name == "sparsity_bias") sparsity_bias = parse_double(key, value);
    else if (name == "sheet_init") sheet_init = sheet_init_from_string(value);
    else if (name == "augment_classifier") augment_classifier = parse_bool(key, value);
    else if (name == "eval_fraction") eval_fraction = parse_double(key, value);
    else if (name == "positive_class") positive_class = parse_size(key, value);
    else if (name == "augment_flip_prob") augment.flip_prob = parse_double(key, value);
    else if (name == "augment_max_rotation_deg") augment.max_rotation_deg = parse_double(key, value);
    else if (name == "augment_min_crop") augment.min_crop = parse_double(key, value);
    else if (name == "augment_brightness") augment.brightness = parse_double(key, value);
    else if (name == "augment_contrast") augment.contrast = parse_double(key, value);
    else if (name == "seed") seed = parse_u64(key, value);
    else throw InvalidArgument("unknown config key '" + key + "'");
  }
}

std::string TrainingCurve::to_csv() const {
  std::string out = "updates,sparsity,f1,accuracy\n";
  for (const auto& p : points) {
    out += std::to_string(p.updates) + "," + format_double(p.sparsity) + "," + format_double(p.f1) + "," +
           format_double(p.accuracy) + "\n";
  }
  return out;
}

TrainingCurve TrainingCurve::from_csv(const std::string& text) {
  TrainingCurve curve;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "updates,sparsity,f1,accuracy") {
    throw IoError("training curve CSV must start with 'updates,sparsity,f1,accuracy'");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) f.push_back(field);
    if (f.size() != 4) throw IoError("training curve row needs 4 fields: " + line);
    curve.points.push_back({parse_size("updates", f[0]), parse_double("sparsity", f[1]), parse_double("f1", f[2]),
                            parse_double("accuracy", f[3])});
  }
  return curve;
}

Optimizer::Optimizer(std::vector<nx::Tensor> params, std::vector<double> lrs, double max_norm)
    : params_(std::move(params)), lrs_(std::move(lrs)), max_norm_(max_norm) {
  if (params_.size() != lrs_.size()) throw InvalidArgument("one learning rate per parameter required");
}

void Optimizer::zero_grad() { nx::zero_grads(params_); }

double Optimizer::step() {
  double squared = 0.0;
  for (const auto& p : params_)
    if (p.has_grad())
      for (double g : p.grad()) squared += g * g;
  const double norm = std::sqrt(squared);
  const double scale = (max_norm_ > 0.0 && norm > max_norm_) ? max_norm_ / norm : 1.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    update(i, params_[i].mutable_data(), params_[i].grad(), scale);
  }
  return norm;
}

SgdMomentum::SgdMomentum(std::vector<nx::Tensor> params, std::vector<double> lrs, double momentum, double max_norm)
    : Optimizer(std::move(params), std::move(lrs), max_norm), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void SgdMomentum::update(std::size_t i, std::span<double> data, std::span<const double> grad, double scale) {
  auto& v = velocity_[i];
  for (std::size_t k = 0; k < data.size(); ++k) {
    v[k] = momentum_ * v[k] + scale * grad[k];
    data[k] -= lrs_[i] * v[k];
  }
}

Adam::Adam(std::vector<nx::Tensor> params, std::vector<double> lrs, double beta1, double beta2, double epsilon,
           double max_norm)
    : Optimizer(std::move(params), std::move(lrs), max_norm), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
  steps_.assign(params_.size(), 0);
}

void Adam::update(std::size_t i, std::span<double> data, std::span<const double> grad, double scale) {
  const double t = double(++steps_[i]);
  const double c1 = 1.0 - std::pow(beta1_, t), c2 = 1.0 - std::pow(beta2_, t);
  auto& m = m_[i];
  auto& v = v_[i];
  for (std::size_t k = 0; k < data.size(); ++k) {
    const double g = scale * grad[k];
    m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
    v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
    data[k] -= lrs_[i] * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon_);
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::vector<nx::Tensor> params, std::vector<double> lrs,
                                          const TrainConfig& config) {
  if (kind == OptimizerKind::Sgd) {
    return std::make_unique<SgdMomentum>(std::move(params), std::move(lrs), config.momentum, config.grad_clip);
  }
  return std::make_unique<Adam>(std::move(params), std::move(lrs), config.momentum, config.adam_beta2, 1e-8,
                                config.grad_clip);
}

PretrainLosses pretrain_loss(const nx::Tensor& z_a, const nx::Tensor& z_b,
                             const std::vector<std::vector<int>>& correspondence, double align_weight,
                             double anticollapse_weight) {
  const std::size_t batch = z_a.dim(0), rows = z_a.dim(2), cols = z_a.dim(3);
  std::vector<double> valid(batch * rows * cols, 0.0);
  std::size_t count = 0;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t l = 0; l < rows * cols; ++l)
      if (correspondence[n][l] >= 0) {
        valid[n * rows * cols + l] = 1.0;
        ++count;
      }
  if (count == 0) throw InvalidArgument("no corresponding cells between the views");

  const nx::Tensor agreement = nx::sum_axis(nx::mul(z_a, nx::gather_cells(z_b, correspondence)), 1);
  const nx::Tensor log_agreement = nx::log(nx::add_scalar(agreement, 1e-8));
  const nx::Tensor align = nx::mul_scalar(
      nx::sum(nx::mul(log_agreement, nx::Tensor::from_data({batch, rows, cols}, std::move(valid)))),
      -1.0 / double(count));

  auto anticollapse_of = [](const nx::Tensor& z) {
    const nx::Tensor per_prototype = nx::sum_axis(nx::spatial_max_pool(z).values, 0);
    return nx::mul_scalar(nx::mean(nx::log(nx::add_scalar(nx::tanh(per_prototype), 1e-8))), -1.0);
  };
  const nx::Tensor anticollapse = nx::mul_scalar(nx::add(anticollapse_of(z_a), anticollapse_of(z_b)), 0.5);

  PretrainLosses out;
  out.align = align.item();
  out.anticollapse = anticollapse.item();
  out.total = nx::add(nx::mul_scalar(align, align_weight), nx::mul_scalar(anticollapse, anticollapse_weight));
  return out;
}

void pretrain_prototypes(model::ProtoModel& model, std::span<const Image> images, const TrainConfig& config,
                         const ProgressFn& progress) {
  config.validate();
  if (images.empty()) throw InvalidArgument("pretraining needs at least one image");
  if (config.pretrain_updates == 0) return;

  std::vector<nx::Tensor> params;
  for (auto& p : model.backbone_parameters()) params.push_back(p.tensor);
  auto optimizer = make_optimizer(config.pretrain_optimizer, params,
                                  std::vector<double>(params.size(), config.lr_pretrain), config);

  const std::size_t grid = model.config().grid_size();
  auto order_rng = stream_rng(config.seed, 0, kPretrainOrder);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  for (std::size_t step = 0; step < config.pretrain_updates; ++step) {
    std::vector<Image> view_a, view_b;
    std::vector<std::vector<int>> correspondence;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const std::uint64_t draw = stream_rng(config.seed, step * config.batch_size + k, kPretrainAugment)();
      auto pair = augment_pair(images[order[cursor++]], draw, config.augment, grid);
      view_a.push_back(std::move(pair.view_a));
      view_b.push_back(std::move(pair.view_b));
      correspondence.push_back(std::move(pair.correspondence));
    }
    const std::size_t b = view_a.size();
    const nx::Tensor z = model.forward_grid(stack_pair_inputs(model, view_a, view_b));
    const double align_weight =
        config.align_ramp ? config.align_weight * double(step + 1) / double(config.pretrain_updates) : config.align_weight;
    auto losses = pretrain_loss(nx::slice_leading(z, 0, b), nx::slice_leading(z, b, 2 * b), correspondence,
                                align_weight, config.anticollapse_weight);
    const double loss = losses.total.item();
    check_finite(loss, "pretrain", step);
    optimizer->zero_grad();
    losses.total.backward();
    const double norm = optimizer->step();
    if (progress) progress({"pretrain", step + 1, config.pretrain_updates, loss, losses.align, losses.anticollapse, norm});
  }
  optimizer->zero_grad();
}

double alignment_agreement(const model::ProtoModel& model, std::span<const Image> images, const TrainConfig& config,
                           std::uint64_t seed) {
  if (images.empty()) throw InvalidArgument("alignment_agreement needs at least one image");
  const std::size_t grid = model.config().grid_size();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto pair = augment_pair(images[i], stream_rng(seed, i, kPretrainAugment)(), config.augment, grid);
    const auto a = model.encode(pair.view_a);
    const auto b = model.encode(pair.view_b);
    const std::size_t plane = grid * grid;
    for (std::size_t l = 0; l < plane; ++l) {
      const int s = pair.correspondence[l];
      if (s < 0) continue;
      double dot = 0.0;
      for (std::size_t p = 0; p < a.prototypes; ++p) dot += a.values[p * plane + l] * b.values[p * plane + std::size_t(s)];
      total += dot;
      ++count;
    }
  }
  return count ? total / double(count) : 0.0;
}

TrainingCurve train_classifier(model::ProtoModel& model, std::span<const Image> images,
                               std::span<const std::size_t> labels, const TrainConfig& config,
                               std::span<const Image> eval_images, std::span<const std::size_t> eval_labels,
                               const ProgressFn& progress) {
  config.validate();
  if (images.size() != labels.size()) throw InvalidArgument("images and labels differ in length");
  if (eval_images.size() != eval_labels.size()) throw InvalidArgument("eval images and labels differ in length");
  if (images.empty()) throw InvalidArgument("training needs at least one labeled image");
  const std::size_t classes = model.config().num_classes;
  for (std::size_t label : labels)
    if (label >= classes) throw InvalidArgument("label " + std::to_string(label) + " out of range");
  if (std::all_of(labels.begin(), labels.end(), [&](std::size_t l) { return l == labels.front(); })) {
    throw InvalidArgument("training needs at least two classes, got only class " + std::to_string(labels.front()));
  }
  if (config.positive_class >= classes) throw InvalidArgument("train.positive_class out of range");
  if (eval_images.empty()) {
    eval_images = images;
    eval_labels = labels;
  }

  auto& sheet = model.sheet();
  init_sheet(sheet, config.sheet_init, config.seed);

  std::vector<nx::Tensor> params;
  std::vector<double> lrs;
  for (auto& p : model.backbone_parameters()) {
    params.push_back(p.tensor);
    lrs.push_back(config.lr_backbone);
  }
  params.push_back(sheet.weights());
  lrs.push_back(config.lr_head);
  auto optimizer = make_optimizer(config.optimizer, params, lrs, config);

  BalancedSampler sampler(labels, stream_rng(config.seed, 0, kTrainSampler)(), classes);
  const std::size_t interval =
      std::max<std::size_t>(1, std::size_t(std::lround(config.eval_fraction * double(config.train_updates))));

  TrainingCurve curve;
  auto evaluate = [&](std::size_t updates) {
    const auto report = explain::compute_metrics(model, eval_images, eval_labels, config.positive_class);
    curve.points.push_back({updates, report.sparsity, report.f1, report.accuracy});
  };
  evaluate(0);

  const double shrink = config.sparsity_bias * config.lr_head;
  for (std::size_t step = 0; step < config.train_updates; ++step) {
    const auto batch = sampler.next_batch(config.batch_size);
    std::vector<Image> views;
    std::vector<std::size_t> targets;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const Image& image = images[batch[k]];
      if (config.augment_classifier) {
        views.push_back(augment_single(image, stream_rng(config.seed, step * config.batch_size + k, kTrainAugment)(),
                                       config.augment));
      } else {
        views.push_back(image);
      }
      targets.push_back(labels[batch[k]]);
    }
    const nx::Tensor presence = nx::spatial_max_pool(model.forward_grid(model.to_input(views))).values;
    const nx::Tensor logits = nx::log1p(model.forward_scores(presence));
    const nx::Tensor loss = nx::mul_scalar(nx::mean(nx::select_columns(nx::log_softmax_rows(logits), targets)), -1.0);
    const double value = loss.item();
    check_finite(value, "train", step);
    optimizer->zero_grad();
    loss.backward();
    const double norm = optimizer->step();
    for (auto& w : sheet.weights().mutable_data()) w = std::max(0.0, w - shrink);
    if (progress) progress({"train", step + 1, config.train_updates, value, 0.0, 0.0, norm});
    if ((step + 1) % interval == 0 || step + 1 == config.train_updates) evaluate(step + 1);
  }
  optimizer->zero_grad();
  return curve;
}

}  // namespace pipnet::train
