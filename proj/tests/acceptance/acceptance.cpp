// End-to-end acceptance run. Prints one PASS/FAIL line per numbered
// criterion (plus a few supporting checks marked "info") and exits nonzero
// if any numbered criterion fails.
//
// Usage: acceptance [--config FILE] [--workdir DIR] [--only 1,8,9]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fd_oracle.hpp"
#include "fixtures.hpp"
#include "pipnet/data/synthetic.hpp"
#include "pipnet/debug/debugger.hpp"
#include "pipnet/error.hpp"
#include "pipnet/explain/explanation.hpp"
#include "pipnet/explain/metrics.hpp"
#include "pipnet/numerics/ops.hpp"
#include "pipnet/train/trainer.hpp"
#include "random_tensor.hpp"

using namespace pipnet;
namespace nx = pipnet::numerics;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::map<int, bool> g_results;

void report(int id, const std::string& name, const Outcome& o) {
  g_results[id] = o.pass;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
}

void info(const std::string& name, bool ok, const std::string& detail) {
  std::cout << "info " << (ok ? "ok  " : "MISS") << " " << name << ": " << detail << std::endl;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  testing::FdReport total;
  std::vector<std::string> failures;
  auto add = [&](const std::string& name, const testing::FdReport& r) {
    total.checked += r.checked;
    total.failures += r.failures;
    total.worst_relative = std::max(total.worst_relative, r.worst_relative);
    if (!r.ok()) failures.push_back(name + " (" + r.first_failure + ")");
  };
  auto dot = [](const nx::Tensor& t, const nx::Tensor& w) { return nx::sum(nx::mul(t, w)); };
  auto w4 = testing::random_tensor({2, 3, 4, 4}, rng, -1, 1, false);

  {
    auto a = testing::random_tensor({2, 3, 4, 4}, rng), b = testing::random_tensor({2, 3, 4, 4}, rng);
    add("add", testing::check_gradients({a, b}, [&] { return dot(nx::add(a, b), w4); }));
    add("sub", testing::check_gradients({a, b}, [&] { return dot(nx::sub(a, b), w4); }));
    add("mul", testing::check_gradients({a, b}, [&] { return dot(nx::mul(a, b), w4); }));
    add("add_scalar", testing::check_gradients({a}, [&] { return dot(nx::add_scalar(a, 0.3), w4); }));
    add("mul_scalar", testing::check_gradients({a}, [&] { return dot(nx::mul_scalar(a, -1.7), w4); }));
  }
  {
    auto a = testing::random_tensor({2, 3, 4, 4}, rng, -2, 2);
    auto pos = testing::random_tensor({2, 3, 4, 4}, rng, 0.2, 3.0);
    add("exp", testing::check_gradients({a}, [&] { return dot(nx::exp(a), w4); }));
    add("tanh", testing::check_gradients({a}, [&] { return dot(nx::tanh(a), w4); }));
    add("gelu", testing::check_gradients({a}, [&] { return dot(nx::gelu(a), w4); }));
    add("log", testing::check_gradients({pos}, [&] { return dot(nx::log(pos), w4); }));
    add("log1p", testing::check_gradients({pos}, [&] { return dot(nx::log1p(pos), w4); }));
    add("softmax_channel", testing::check_gradients({a}, [&] { return dot(nx::softmax_channel(a), w4); }));
    auto g = testing::random_tensor({3}, rng, 0.5, 1.5), b = testing::random_tensor({3}, rng);
    add("channel_layer_norm",
        testing::check_gradients({a, g, b}, [&] { return dot(nx::channel_layer_norm(a, g, b), w4); }));
  }
  {
    std::vector<double> v(32);
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1 : -1) * mag(rng);
    auto a = nx::Tensor::from_data({32}, v, true);
    auto w = testing::random_tensor({32}, rng, -1, 1, false);
    add("relu", testing::check_gradients({a}, [&] { return dot(nx::relu(a), w); }));
  }
  {
    auto a = testing::random_tensor({2, 3, 4, 4}, rng);
    auto w3 = testing::random_tensor({2, 4, 4}, rng, -1, 1, false);
    auto w1 = testing::random_tensor({1, 3, 4, 4}, rng, -1, 1, false);
    auto w2 = testing::random_tensor({6, 16}, rng, -1, 1, false);
    add("sum/mean", testing::check_gradients({a}, [&] { return nx::mean(nx::mul(a, a)); }));
    add("sum_axis", testing::check_gradients({a}, [&] { return dot(nx::sum_axis(a, 1), w3); }));
    add("slice_leading", testing::check_gradients({a}, [&] { return dot(nx::slice_leading(a, 1, 2), w1); }));
    add("reshape", testing::check_gradients({a}, [&] { return dot(nx::reshape(a, {6, 16}), w2); }));
  }
  {
    auto a = testing::random_tensor({3, 5}, rng), b = testing::random_tensor({5, 4}, rng);
    auto w = testing::random_tensor({3, 4}, rng, -1, 1, false);
    add("matmul", testing::check_gradients({a, b}, [&] { return dot(nx::matmul(a, b), w); }));
    auto x = testing::random_tensor({2, 3, 5, 5}, rng), k = testing::random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    auto wc = testing::random_tensor({2, 4, 3, 3}, rng, -1, 1, false);
    add("conv2d", testing::check_gradients({x, k}, [&] { return dot(nx::conv2d(x, k, 2, 1), wc); }));
  }
  {
    std::vector<double> v(2 * 3 * 16);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * double(i);
    std::shuffle(v.begin(), v.end(), rng);
    auto a = nx::Tensor::from_data({2, 3, 4, 4}, v, true);
    auto w = testing::random_tensor({2, 3}, rng, -1, 1, false);
    add("spatial_max_pool", testing::check_gradients({a}, [&] { return dot(nx::spatial_max_pool(a).values, w); }));
    auto r = testing::random_tensor({4, 3}, rng, -2, 2);
    auto wr = testing::random_tensor({4, 3}, rng, -1, 1, false);
    add("log_softmax_rows", testing::check_gradients({r}, [&] { return dot(nx::log_softmax_rows(r), wr); }));
    add("select_columns",
        testing::check_gradients({r}, [&] { return nx::sum(nx::select_columns(nx::log_softmax_rows(r), {0, 2, 1, 2})); }));
    auto c = testing::random_tensor({2, 3, 2, 2}, rng);
    auto wg = testing::random_tensor({2, 3, 2, 2}, rng, -1, 1, false);
    add("gather_cells",
        testing::check_gradients({c}, [&] { return dot(nx::gather_cells(c, {{1, 0, 3, 2}, {0, -1, 0, 3}}), wg); }));
  }

  // Random three-deep compositions on top of a convolution.
  using Unary = std::function<nx::Tensor(const nx::Tensor&)>;
  const std::vector<std::pair<std::string, Unary>> pool{
      {"tanh", [](const nx::Tensor& t) { return nx::tanh(t); }},
      {"gelu", [](const nx::Tensor& t) { return nx::gelu(t); }},
      {"softmax", [](const nx::Tensor& t) { return nx::softmax_channel(t); }},
      {"exp_half", [](const nx::Tensor& t) { return nx::exp(nx::mul_scalar(t, 0.5)); }},
      {"square", [](const nx::Tensor& t) { return nx::mul(t, t); }},
      {"log1p_sq", [](const nx::Tensor& t) { return nx::log1p(nx::mul(t, t)); }},
      {"layer_norm", [](const nx::Tensor& t) {
         return nx::channel_layer_norm(t, nx::Tensor::full({t.dim(1)}, 1.0), nx::Tensor::zeros({t.dim(1)}));
       }},
  };
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int trial = 0; trial < 40; ++trial) {
    auto x = testing::random_tensor({2, 3, 3, 3}, rng);
    auto k = testing::random_tensor({3, 3, 3, 3}, rng, -0.4, 0.4);
    auto w = testing::random_tensor({2, 3, 3, 3}, rng, -1, 1, false);
    const auto a = pick(rng), b = pick(rng), c = pick(rng);
    add(pool[a].first + ">" + pool[b].first + ">" + pool[c].first, testing::check_gradients({x, k}, [&] {
          return dot(pool[c].second(pool[b].second(pool[a].second(nx::conv2d(x, k, 1, 1)))), w);
        }));
  }
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = failures.empty() && total.checked > 0 && elapsed < 60.0;
  o.detail = std::to_string(total.checked) + " derivatives, worst relative error " + fmt(total.worst_relative, 8) +
             ", " + fmt(elapsed, 1) + " s";
  if (!failures.empty()) o.detail += ", first failure " + failures.front();
  return o;
}

// ---------------------------------------------------------------- 8

Outcome metric_oracle() {
  // Random images through a random model; labels are then assigned so that
  // the confusion matrix is TP=3, FP=1, FN=2, TN=4 by construction.
  std::mt19937_64 rng(8);
  model::ProtoModel model(testing::small_config(), 8);
  std::vector<double> w(model.sheet().num_prototypes() * 2);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto& v : w) v = u(rng);
  model.sheet().set_weights(w);
  std::vector<Image> pos, neg;
  for (int guard = 0; guard < 10000 && (pos.size() < 4 || neg.size() < 6); ++guard) {
    Image image = testing::random_image(32, rng);
    const auto p = model.predict(image);
    if (!p.label) continue;
    if (*p.label == 1 && pos.size() < 4) pos.push_back(std::move(image));
    else if (*p.label == 0 && neg.size() < 6) neg.push_back(std::move(image));
  }
  if (pos.size() < 4 || neg.size() < 6) return {false, "could not build the fixture"};
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 4; ++i) {  // predicted 1: three true 1s, one true 0
    images.push_back(pos[i]);
    labels.push_back(i < 3 ? 1 : 0);
  }
  for (std::size_t i = 0; i < 6; ++i) {  // predicted 0: two true 1s, four true 0s
    images.push_back(neg[i]);
    labels.push_back(i < 2 ? 1 : 0);
  }
  const auto r = explain::compute_metrics(model, images, labels, 1);
  const bool ok = r.confusion.tp == 3 && r.confusion.fp == 1 && r.confusion.fn == 2 && r.confusion.tn == 4 &&
                  r.accuracy == 7.0 / 10.0 && r.sensitivity == 3.0 / 5.0 && r.specificity == 4.0 / 5.0 &&
                  r.f1 == 2.0 * 3.0 / (2.0 * 3.0 + 1.0 + 2.0) && r.count == 10 && r.abstain_fraction == 0.0;
  return {ok, "tp " + std::to_string(r.confusion.tp) + " fp " + std::to_string(r.confusion.fp) + " fn " +
                  std::to_string(r.confusion.fn) + " tn " + std::to_string(r.confusion.tn) + ", accuracy " +
                  fmt(r.accuracy) + " sensitivity " + fmt(r.sensitivity) + " specificity " + fmt(r.specificity) +
                  " f1 " + fmt(r.f1)};
}

// ---------------------------------------------------------------- 9

Outcome split_property() {
  std::mt19937_64 rng(9);
  std::size_t overlaps = 0, items_checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::vector<data::DatasetItem> items;
    const std::size_t studies = 5 + rng() % 60;
    for (std::size_t s = 0; s < studies; ++s)
      for (std::size_t k = 0, n = 1 + rng() % 5; k < n; ++k) {
        data::DatasetItem item;
        item.study_id = "study" + std::to_string(s);
        items.push_back(std::move(item));
      }
    std::shuffle(items.begin(), items.end(), rng);
    const auto split = data::split_by_study(items, 0.25, seed);
    std::set<std::string> train;
    for (auto i : split.train_ids) train.insert(items[i].study_id);
    for (auto i : split.test_ids) overlaps += train.count(items[i].study_id);
    items_checked += items.size();
    if (split.train_ids.size() + split.test_ids.size() != items.size()) ++overlaps;
  }
  return {overlaps == 0, std::to_string(overlaps) + " overlapping studies over 100 seeds (" +
                             std::to_string(items_checked) + " items)"};
}

// ---------------------------------------------------------------- pipeline

struct Pipeline {
  data::Dataset data;
  data::SyntheticSpec spec;
  train::TrainConfig train;
  model::ProtoModel model{model::ModelConfig{}};
  train::TrainingCurve curve;
  double agreement = 0.0;
  std::size_t collapsed = 0;  // prototypes never above 0.5 after pretraining
  double seconds = 0.0;
};

Pipeline run_pipeline(const KeyValueConfig& kv, const fs::path& workdir) {
  Pipeline p;
  const auto start = Clock::now();
  p.spec.apply(kv);
  model::ModelConfig mc;
  mc.apply(kv);
  p.train.apply(kv);
  p.data = data::generate(p.spec, workdir / "data");
  p.data = data::load_dataset(workdir / "data");
  std::cout << "info      dataset: " << p.data.train.size() << " train, " << p.data.test.size() << " test ("
            << fmt(seconds_since(start), 1) << " s)" << std::endl;

  p.model = model::ProtoModel(mc, p.train.seed);
  const auto train_images = data::images_of(p.data.train);
  const auto train_labels = data::labels_of(p.data.train);
  const auto test_images = data::images_of(p.data.test);
  const auto test_labels = data::labels_of(p.data.test);
  auto progress = [&](const train::Progress& pr) {
    const std::size_t every = std::max<std::size_t>(1, pr.total / 10);
    if (pr.step % every == 0)
      std::cout << "info      " << pr.stage << " " << pr.step << "/" << pr.total << " loss " << fmt(pr.loss) << " ("
                << fmt(seconds_since(start), 0) << " s)" << std::endl;
  };
  train::pretrain_prototypes(p.model, train_images, p.train, progress);
  p.agreement = train::alignment_agreement(p.model, test_images, p.train, 99);
  {
    const auto presence = p.model.presence_batch(train_images);
    for (std::size_t i = 0; i < mc.num_prototypes; ++i) {
      bool fired = false;
      for (const auto& pv : presence) fired |= pv.scores[i] > 0.5;
      p.collapsed += !fired;
    }
  }
  p.curve = train::train_classifier(p.model, train_images, train_labels, p.train, test_images, test_labels, progress);
  p.seconds = seconds_since(start);
  return p;
}

double class_accuracy(const model::ProtoModel& model, std::span<const data::DatasetItem> items, std::size_t cls) {
  std::vector<Image> images;
  for (const auto& it : items)
    if (it.label == cls) images.push_back(it.image);
  if (images.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : model.predict_batch(images)) hits += p.label == cls;
  return double(hits) / double(images.size());
}

void confound_replication(const Pipeline& p) {
  const auto& model = p.model;
  const std::size_t target = 1, other = 0;
  const auto test_images = data::images_of(p.data.test);
  const auto clean = explain::compute_metrics(model, test_images, data::labels_of(p.data.test), 1);
  const double clean_other = class_accuracy(model, p.data.test, other);

  const auto shortcuts = debug::detect_shortcuts(model, p.data.train, 0.1, 0.2);
  const auto flagged = shortcuts.flagged();
  const auto cf = debug::counterfactual_eval(model, p.data.test, p.spec.artifact, target, flagged, 0, 1);
  const auto& tgt = cf.row("target_with_artifact");
  const auto& oth = cf.row("other_with_artifact");
  const auto& cln = cf.row("test_without_artifact");

  const bool a = clean.accuracy >= 0.90;
  const bool b = tgt.original.accuracy >= 0.95;
  const bool c = oth.original.accuracy <= clean_other - 0.30;
  const bool d = !flagged.empty();
  const bool e = oth.adapted.accuracy >= clean_other - 0.15 &&
                 std::abs(cln.adapted.accuracy - cln.original.accuracy) <= 0.03;
  const bool t = p.seconds < 3600.0;

  std::ostringstream detail;
  detail << "(a) clean acc " << fmt(clean.accuracy) << (a ? " ok" : " NO") << "; (b) target+artifact acc "
         << fmt(tgt.original.accuracy) << (b ? " ok" : " NO") << "; (c) other+artifact acc "
         << fmt(oth.original.accuracy) << " vs clean other " << fmt(clean_other) << (c ? " ok" : " NO")
         << "; (d) flagged " << flagged.size() << (d ? " ok" : " NO") << "; (e) adapted other+artifact "
         << fmt(oth.adapted.accuracy) << ", clean " << fmt(cln.original.accuracy) << " -> "
         << fmt(cln.adapted.accuracy) << (e ? " ok" : " NO") << "; pipeline " << fmt(p.seconds / 60.0, 1)
         << " min" << (t ? " ok" : " NO");
  report(2, "synthetic confound replication", {a && b && c && d && e && t, detail.str()});

  // Supporting checks from the module contracts.
  info("pretrain alignment agreement >= 0.5", p.agreement >= 0.5, fmt(p.agreement));
  info("every prototype fires (> 0.5) after pretraining", p.collapsed == 0,
       std::to_string(p.collapsed) + " never fired");
  bool weights_ok = !flagged.empty();
  for (std::size_t id : flagged) weights_ok &= model.sheet().effective_weight(id, target) > 0.0;
  info("flagged prototypes weigh toward the confounded class", weights_ok, [&] {
    std::string s;
    for (std::size_t id : flagged) s += std::to_string(id) + ":" + fmt(model.sheet().effective_weight(id, target), 3) + " ";
    return s.empty() ? std::string("none flagged") : s;
  }());
  if (!flagged.empty()) {
    std::size_t best = flagged.front();
    for (std::size_t id : flagged)
      if (model.sheet().effective_weight(id, target) > model.sheet().effective_weight(best, target)) best = id;
    const auto card = explain::top_patches(model, p.data.train, best, 10);
    std::size_t hit = 0;
    for (const auto& patch : card.patches) {
      const auto& mask = p.data.train[patch.image_index].mask;
      hit += mask && mask_pixels_in(*mask, patch.rect) > 0;
    }
    const double frac = card.patches.empty() ? 0.0 : double(hit) / double(card.patches.size());
    info("artifact prototype top-10 patches on the artifact >= 80%", frac >= 0.8,
         "prototype " + std::to_string(best) + ": " + std::to_string(hit) + "/" + std::to_string(card.patches.size()));
  }
  const auto abst = debug::abstention_report(model, p.data.test);
  info("clean test abstention <= 5%", abst.fraction <= 0.05, fmt(abst.fraction));
}

void sparsity_behavior(const Pipeline& p) {
  const auto& pts = p.curve.points;
  if (pts.empty()) {
    report(3, "sparsity behavior", {false, "empty curve"});
    return;
  }
  const std::size_t total = pts.back().updates;
  const auto at_tenth = std::find_if(pts.begin(), pts.end(), [&](const auto& q) { return q.updates * 10 >= total; });
  double best_f1 = 0.0;
  for (const auto& q : pts) best_f1 = std::max(best_f1, q.f1);
  const auto& last = pts.back();
  const bool a = last.sparsity >= 0.5 && p.model.config().num_prototypes == 64;
  const bool b = at_tenth != pts.end() && last.sparsity >= at_tenth->sparsity;
  const bool c = last.f1 >= best_f1 - 0.05;
  report(3, "sparsity behavior",
         {a && b && c, "final sparsity " + fmt(last.sparsity) + " (P=" + std::to_string(p.model.config().num_prototypes) +
                           "), at " + std::to_string(at_tenth != pts.end() ? at_tenth->updates : 0) + " updates " +
                           fmt(at_tenth != pts.end() ? at_tenth->sparsity : -1.0) + "; final F1 " + fmt(last.f1) +
                           " vs best " + fmt(best_f1)});
}

void forced_abstention(const Pipeline& p) {
  auto m = p.model.clone();
  for (std::size_t i = 0; i < m.sheet().num_prototypes(); ++i) m.sheet().disable(i);
  std::size_t abstained = 0, nonzero = 0;
  const auto preds = m.predict_batch(data::images_of(p.data.test));
  for (const auto& pr : preds) {
    abstained += pr.abstained();
    for (double s : pr.scores) nonzero += s != 0.0;
  }
  report(4, "forced abstention",
         {abstained == preds.size() && nonzero == 0 && !preds.empty(),
          std::to_string(abstained) + "/" + std::to_string(preds.size()) + " abstained, " + std::to_string(nonzero) +
              " nonzero scores"});
}

void explanation_completeness(const Pipeline& p) {
  std::mt19937_64 rng(5);
  std::vector<std::size_t> idx(p.data.test.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min<std::size_t>(100, idx.size()));
  const auto& sheet = p.model.sheet();
  double worst = 0.0;
  for (std::size_t i : idx) {
    const auto pred = p.model.predict(p.data.test[i].image);
    const auto expl = explain::local_explanation(p.model, p.data.test[i].image);
    for (std::size_t c = 0; c < sheet.num_classes(); ++c) {
      double sum = 0.0;
      for (std::size_t k = 0; k < sheet.num_prototypes(); ++k) sum += pred.presence.scores[k] * sheet.effective_weight(k, c);
      worst = std::max(worst, std::abs(sum - pred.scores[c]));
      double listed = expl.omitted[c];
      for (const auto& contrib : expl.listed) listed += contrib.per_class[c];
      worst = std::max(worst, std::abs(listed - pred.scores[c]));
    }
  }
  report(5, "explanation completeness",
         {worst <= 1e-5 && idx.size() == 100, std::to_string(idx.size()) + " images, max deviation " + fmt(worst, 12)});
}

void bookkeeping(const Pipeline& p) {
  std::vector<std::size_t> relevant;
  for (std::size_t i = 0; i < p.model.sheet().num_prototypes(); ++i)
    if (p.model.sheet().is_relevant(i)) relevant.push_back(i);
  const auto presence = p.model.presence_batch(data::images_of(p.data.test));
  auto mean_local = [&](const model::ScoringSheet& sheet) {
    double total = 0.0;
    for (const auto& pv : presence) total += double(explain::local_size(pv, sheet));
    return total / double(presence.size());
  };
  std::mt19937_64 rng(6);
  bool ok = !relevant.empty();
  std::string detail;
  for (std::size_t k : {std::size_t(1), std::size_t(2), relevant.size() / 2, relevant.size()}) {
    if (k == 0 || k > relevant.size()) continue;
    auto m = p.model.clone();
    auto pool = relevant;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t before_global = explain::global_size(m.sheet());
    double before_local = mean_local(m.sheet());
    bool monotone = true;
    for (std::size_t j = 0; j < k; ++j) {
      m.sheet().disable(pool[j]);
      const double now = mean_local(m.sheet());
      monotone &= now <= before_local;
      before_local = now;
    }
    const std::size_t after_global = explain::global_size(m.sheet());
    ok &= before_global - after_global == k && monotone;
    detail += "k=" + std::to_string(k) + ": " + std::to_string(before_global) + "->" + std::to_string(after_global) +
              (monotone ? "" : " (local size increased)") + "; ";
  }
  report(6, "bookkeeping arithmetic", {ok, detail});
}

void multi_instance(const Pipeline& p) {
  std::mt19937_64 rng(7);
  const auto& items = p.data.test;
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1), size(1, 4);
  std::size_t mismatches = 0;
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    std::vector<Image> study;
    for (std::size_t k = 0, n = size(rng); k < n; ++k) study.push_back(items[pick(rng)].image);
    const auto got = p.model.predict_study(study);
    // Brute force: elementwise max of the grids, then pool and classify.
    std::vector<model::FeatureGrid> grids;
    for (const auto& img : study) grids.push_back(p.model.encode(img));
    model::FeatureGrid merged = grids.front();
    for (const auto& g : grids)
      for (std::size_t i = 0; i < g.values.size(); ++i) merged.values[i] = std::max(merged.values[i], g.values[i]);
    const auto pooled = model::pool_presence(merged);
    const auto want = model::classify(pooled, p.model.sheet(), p.model.config().abstain_epsilon);
    // The study path runs the images as one batch, whose GEMM blocking can
    // differ from single-image calls in the last bits.
    double dev = 0.0;
    auto track = [&](const std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) dev = std::max(dev, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    };
    track(got.scores, want.scores);
    track(got.presence.scores, pooled.scores);
    worst = std::max(worst, dev);
    mismatches += got.label != want.label || dev > 1e-12;
  }
  report(7, "multi-instance equivalence",
         {mismatches == 0, std::to_string(mismatches) + "/50 studies differ, max relative deviation " + fmt(worst * 1e15, 2) + "e-15"});
}

}  // namespace

int main(int argc, char** argv) {
  fs::path config_path = PIPNET_DEFAULT_ACCEPTANCE_CONFIG;
  fs::path workdir;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) config_path = argv[++i];
    else if (arg == "--workdir" && i + 1 < argc) workdir = argv[++i];
    else if (arg == "--only" && i + 1 < argc) {
      for (auto id : parse_size_list("--only", argv[++i])) only.insert(int(id));
    } else {
      std::cerr << "usage: acceptance [--config FILE] [--workdir DIR] [--only 1,8,9]\n";
      return 2;
    }
  }
  auto wanted = [&](int id) { return only.empty() || only.count(id); };

  try {
    if (wanted(1)) report(1, "gradient correctness", gradient_suite());
    if (wanted(8)) report(8, "metric oracle", metric_oracle());
    if (wanted(9)) report(9, "per-study split", split_property());

    if (wanted(2) || wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7)) {
      const auto kv = KeyValueConfig::load(config_path);
      std::cout << "info      config " << config_path.string() << std::endl;
      std::optional<testing::TempDir> temp;
      if (workdir.empty()) {
        temp.emplace("pipnet-acceptance");
        workdir = temp->path();
      }
      const Pipeline p = run_pipeline(kv, workdir);
      if (wanted(2)) confound_replication(p);
      if (wanted(3)) sparsity_behavior(p);
      if (wanted(4)) forced_abstention(p);
      if (wanted(5)) explanation_completeness(p);
      if (wanted(6)) bookkeeping(p);
      if (wanted(7)) multi_instance(p);
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  std::size_t failed = 0;
  for (const auto& [id, ok] : g_results) failed += !ok;
  std::cout << (failed == 0 ? "ALL PASS" : "FAILURES: " + std::to_string(failed)) << " (" << g_results.size()
            << " criteria)" << std::endl;
  return failed == 0 ? 0 : 1;
}
