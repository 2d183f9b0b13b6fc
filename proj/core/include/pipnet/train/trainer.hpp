#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pipnet/kv_config.hpp"
#include "pipnet/model/proto_model.hpp"
#include "pipnet/train/augment.hpp"

namespace pipnet::train {

enum class SheetInit { Normal, Zero, Keep };

std::string to_string(SheetInit init);
SheetInit sheet_init_from_string(const std::string& name);

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
  double lr_head = 0.05;
  double lr_backbone = 1e-4;
  double lr_pretrain = 0.01;  // backbone + prototype head during pretraining
  double momentum = 0.9;  // SGD momentum, also Adam's first-moment decay
  double adam_beta2 = 0.999;
  OptimizerKind pretrain_optimizer = OptimizerKind::Sgd;
  OptimizerKind optimizer = OptimizerKind::Adam;  // supervised stage
  double grad_clip = 1.0;  // max global gradient norm per step, 0 disables
  std::size_t batch_size = 64;
  std::size_t pretrain_updates = 2000;
  std::size_t train_updates = 10000;
  // Pretraining loss coefficients. The alignment weight ramps linearly from
  // 0 to align_weight over the pretraining updates when align_ramp is set.
  double align_weight = 1.0;
  double anticollapse_weight = 5.0;
  bool align_ramp = true;
  double sparsity_bias = 0.005;  // per-step shrink of sheet weights is sparsity_bias * lr_head
  SheetInit sheet_init = SheetInit::Normal;
  bool augment_classifier = true;
  double eval_fraction = 0.05;  // curve interval as a fraction of train_updates
  std::size_t positive_class = 1;
  AugmentPolicy augment;
  std::uint64_t seed = 1;

  void validate() const;
  KeyValueConfig to_kv(const std::string& prefix = "train.") const;
  void apply(const KeyValueConfig& kv, const std::string& prefix = "train.");
};

struct CurvePoint {
  std::size_t updates = 0;
  double sparsity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct TrainingCurve {
  std::vector<CurvePoint> points;

  // "updates,sparsity,f1,accuracy" header plus one row per point.
  std::string to_csv() const;
  static TrainingCurve from_csv(const std::string& text);
};

struct Progress {
  std::string stage;  // "pretrain" or "train"
  std::size_t step = 0;
  std::size_t total = 0;
  double loss = 0.0;
  double align = 0.0;         // pretraining components, 0 in the train stage
  double anticollapse = 0.0;
  double grad_norm = 0.0;  // before clipping
};
using ProgressFn = std::function<void(const Progress&)>;

// First-order optimizer over a fixed parameter list; each parameter has its
// own learning rate. When max_norm > 0 the gradient is rescaled so its
// global L2 norm does not exceed max_norm.
class Optimizer {
 public:
  Optimizer(std::vector<numerics::Tensor> params, std::vector<double> lrs, double max_norm);
  virtual ~Optimizer() = default;
  void zero_grad();
  // Returns the global gradient norm before clipping.
  double step();

 protected:
  // Applies one update to parameter i given its (clipped) gradient.
  virtual void update(std::size_t i, std::span<double> data, std::span<const double> grad, double scale) = 0;

  std::vector<numerics::Tensor> params_;
  std::vector<double> lrs_;

 private:
  double max_norm_;
};

// v = momentum * v + g; x -= lr * v.
class SgdMomentum : public Optimizer {
 public:
  SgdMomentum(std::vector<numerics::Tensor> params, std::vector<double> lrs, double momentum, double max_norm = 0.0);

 private:
  void update(std::size_t i, std::span<double> data, std::span<const double> grad, double scale) override;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// Adam with bias correction (no weight decay).
class Adam : public Optimizer {
 public:
  Adam(std::vector<numerics::Tensor> params, std::vector<double> lrs, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8, double max_norm = 0.0);

 private:
  void update(std::size_t i, std::span<double> data, std::span<const double> grad, double scale) override;
  double beta1_, beta2_, epsilon_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> steps_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::vector<numerics::Tensor> params,
                                          std::vector<double> lrs, const TrainConfig& config);

struct PretrainLosses {
  numerics::Tensor total;
  double align = 0.0;
  double anticollapse = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// Loss for a batch of view pairs: z_a, z_b are [B,P,H,W] grids and
// correspondence[n][l] maps cell l of z_a[n] to a cell of z_b[n] (or -1).
PretrainLosses pretrain_loss(const numerics::Tensor& z_a, const numerics::Tensor& z_b,
                             const std::vector<std::vector<int>>& correspondence, double align_weight,
                             double anticollapse_weight);

// Self-supervised stage: only images are seen. Updates the backbone and the
// prototype projection; the scoring sheet is untouched.
void pretrain_prototypes(model::ProtoModel& model, std::span<const Image> images, const TrainConfig& config,
                         const ProgressFn& progress = {});

// Mean over pairs and valid cells of the inner product of the two views'
// prototype distributions at corresponding cells.
double alignment_agreement(const model::ProtoModel& model, std::span<const Image> images, const TrainConfig& config,
                           std::uint64_t seed);

// Supervised stage: trains the sheet (and fine-tunes the backbone at
// lr_backbone) with class-balanced batches. Weights are clamped to >= 0 and
// shrunk by sparsity_bias * lr_head after every step. The curve is evaluated
// on `eval_images` (the training images when empty).
TrainingCurve train_classifier(model::ProtoModel& model, std::span<const Image> images,
                               std::span<const std::size_t> labels, const TrainConfig& config,
                               std::span<const Image> eval_images = {}, std::span<const std::size_t> eval_labels = {},
                               const ProgressFn& progress = {});

}  // namespace pipnet::train
