#include <benchmark/benchmark.h>

#include <random>

#include "pipnet/data/synthetic.hpp"
#include "pipnet/debug/debugger.hpp"
#include "pipnet/numerics/ops.hpp"
#include "pipnet/train/trainer.hpp"

using namespace pipnet;
namespace nx = pipnet::numerics;

namespace {

nx::Tensor uniform(nx::Shape shape, std::mt19937_64& rng, bool grad) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(nx::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return nx::Tensor::from_data(std::move(shape), std::move(v), grad);
}

const data::Dataset& dataset() {
  static const data::Dataset d = [] {
    auto spec = data::SyntheticSpec{};
    spec.train_count = 256;
    spec.test_count = 64;
    return data::generate_items(spec);
  }();
  return d;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto channels = static_cast<std::size_t>(state.range(0));
  auto x = uniform({16, channels, 16, 16}, rng, true);
  auto k = uniform({channels, channels, 3, 3}, rng, true);
  for (auto _ : state) {
    x.zero_grad();
    k.zero_grad();
    auto loss = nx::sum(nx::conv2d(x, k, 1, 1));
    loss.backward();
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PredictBatch(benchmark::State& state) {
  model::ProtoModel model(model::ModelConfig{}, 1);
  const auto images = data::images_of(std::span(dataset().test).first(static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_batch(images));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PredictBatch)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PretrainStep(benchmark::State& state) {
  model::ProtoModel model(model::ModelConfig{}, 1);
  train::TrainConfig config;
  config.batch_size = static_cast<std::size_t>(state.range(0));
  config.pretrain_updates = 1;
  const auto images = data::images_of(dataset().train);
  for (auto _ : state) train::pretrain_prototypes(model, images, config);
}
BENCHMARK(BM_PretrainStep)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  model::ProtoModel model(model::ModelConfig{}, 1);
  train::TrainConfig config;
  config.batch_size = static_cast<std::size_t>(state.range(0));
  config.train_updates = 1;
  config.eval_fraction = 1.0;
  const auto images = data::images_of(dataset().train);
  const auto labels = data::labels_of(dataset().train);
  const auto probe = std::span(images).first(1);
  const auto probe_labels = std::span(labels).first(1);
  for (auto _ : state) train::train_classifier(model, images, labels, config, probe, probe_labels);
}
BENCHMARK(BM_TrainStep)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_DetectShortcuts(benchmark::State& state) {
  model::ProtoModel model(model::ModelConfig{}, 1);
  const auto presence = model.presence_batch(data::images_of(dataset().train));
  for (auto _ : state) benchmark::DoNotOptimize(debug::detect_shortcuts(model, presence, dataset().train));
}
BENCHMARK(BM_DetectShortcuts)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
