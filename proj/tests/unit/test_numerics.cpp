#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fd_oracle.hpp"
#include "pipnet/error.hpp"
#include "pipnet/numerics/ops.hpp"
#include "pipnet/numerics/snapshot.hpp"
#include "random_tensor.hpp"

using namespace pipnet;
using namespace pipnet::numerics;
using pipnet::testing::check_gradients;
using pipnet::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights; avoids the degenerate all-ones
// upstream gradient of a plain sum.
Tensor dot_loss(const Tensor& t, const Tensor& weights) { return sum(mul(t, weights)); }

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("conv2d: 1x1 kernel scales") {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0);
  auto k = Tensor::full({1, 1, 1, 1}, 2.0);
  auto y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("conv2d: 2x2 window sums") {
  auto x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k = Tensor::full({1, 1, 2, 2}, 1.0);
  auto y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(to_vec(y.data()) == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv2d: output size formula with stride and padding") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 9, 7}, rng, -1, 1, false);
  auto k = random_tensor({5, 3, 3, 3}, rng, -1, 1, false);
  auto y = conv2d(x, k, 2, 1);
  CHECK(y.shape() == Shape{2, 5, (9 + 2 - 3) / 2 + 1, (7 + 2 - 3) / 2 + 1});
}

TEST_CASE("conv2d: shape mismatches are rejected") {
  auto x = Tensor::zeros({1, 2, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 3, 3, 3}), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 5, 5}), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), 1, 0), ShapeError);
  CHECK_THROWS(conv2d(x, Tensor::zeros({1, 2, 3, 3}), 0, 0));
}

TEST_CASE("conv2d: gradient of sum matches finite differences") {
  std::mt19937_64 rng(11);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}}) {
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto k = random_tensor({4, 3, 3, 3}, rng);
    auto report = check_gradients({x, k}, [&] { return sum(conv2d(x, k, stride, pad)); }, 1e-3);
    INFO(report.first_failure);
    CHECK(report.ok());
  }
}

TEST_CASE("softmax_channel: uniform from equal logits") {
  auto y = softmax_channel(Tensor::zeros({1, 4, 2, 2}));
  for (double v : y.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax_channel: two-channel closed form") {
  auto y = softmax_channel(Tensor::from_data({1, 2, 1, 1}, {std::log(2.0), 0.0}));
  CHECK(y.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax_channel: per-location sums are one for arbitrary inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 7, 4, 5}, rng, -50.0, 50.0, false);
    auto y = softmax_channel(x);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t l = 0; l < 20; ++l) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
          const double v = y.data()[(n * 7 + c) * 20 + l];
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("spatial_max_pool: tie resolves to first cell in row-major order") {
  auto r = spatial_max_pool(Tensor::from_data({1, 1, 2, 2}, {0.1, 0.9, 0.3, 0.9}));
  CHECK(r.values.item() == 0.9);
  CHECK(r.argmax[0] == GridCell{0, 1});
}

TEST_CASE("spatial_max_pool: singleton grid") {
  auto r = spatial_max_pool(Tensor::from_data({1, 1, 1, 1}, {0.42}));
  CHECK(r.values.item() == 0.42);
  CHECK(r.argmax[0] == GridCell{0, 0});
}

TEST_CASE("spatial_max_pool: equals exhaustive scan on random grids") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coarse(0, 9);  // coarse values make ties common
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 3, p = 1 + trial % 5, h = 1 + trial % 4, w = 1 + (trial / 4) % 5;
    std::vector<double> values(n * p * h * w);
    for (auto& v : values) v = coarse(rng) / 10.0;
    auto r = spatial_max_pool(Tensor::from_data({n, p, h, w}, values));
    for (std::size_t i = 0; i < n * p; ++i) {
      double best = -1.0;
      std::size_t best_r = 0, best_c = 0;
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < w; ++b)
          if (values[i * h * w + a * w + b] > best) {
            best = values[i * h * w + a * w + b];
            best_r = a;
            best_c = b;
          }
      CHECK(r.values.data()[i] == best);
      CHECK(r.argmax[i] == GridCell{best_r, best_c});
    }
  }
}

TEST_CASE("backward: sum gives ones") {
  auto x = Tensor::full({2, 3}, 0.5, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sum of squares") {
  auto x = Tensor::from_data({2}, {1.0, -2.0}, true);
  sum(mul(x, x)).backward();
  CHECK(to_vec(x.grad()) == std::vector<double>{2.0, -4.0});
}

TEST_CASE("backward: non-scalar loss is rejected") {
  auto x = Tensor::full({2}, 1.0, true);
  CHECK_THROWS_AS(mul_scalar(x, 2.0).backward(), ShapeError);
}

TEST_CASE("backward: gradients accumulate until zero_grads") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  sum(mul_scalar(x, 3.0)).backward();
  sum(mul_scalar(x, 3.0)).backward();
  CHECK(to_vec(x.grad()) == std::vector<double>{6.0, 6.0});
  std::vector<Tensor> params{x};
  zero_grads(params);
  CHECK(to_vec(x.grad()) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward: shared subexpression is visited once") {
  auto x = Tensor::from_data({1}, {3.0}, true);
  auto y = mul(x, x);           // 9
  auto z = add(y, y);           // 18, dz/dx = 4x = 12
  sum(z).backward();
  CHECK(x.grad()[0] == 12.0);
}

TEST_CASE("backward: record is consumed") {
  auto x = Tensor::from_data({1}, {3.0}, true);
  auto loss = sum(mul(x, x));
  CHECK_FALSE(loss.is_leaf());
  loss.backward();
  CHECK(loss.is_leaf());
}

TEST_CASE("no-grad guard suppresses recording") {
  auto x = Tensor::full({2}, 1.0, true);
  NoGradGuard guard;
  auto y = mul_scalar(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("finite differences: every primitive") {
  std::mt19937_64 rng(23);
  auto w4 = random_tensor({2, 3, 4, 4}, rng, -1, 1, false);

  SUBCASE("elementwise binary") {
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto b = random_tensor({2, 3, 4, 4}, rng);
    for (auto op : {&add, &sub, &mul}) {
      auto r = check_gradients({a, b}, [&] { return dot_loss(op(a, b), w4); });
      INFO(r.first_failure);
      CHECK(r.ok());
    }
  }
  SUBCASE("scalar variants") {
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto r1 = check_gradients({a}, [&] { return dot_loss(add_scalar(a, 0.7), w4); });
    auto r2 = check_gradients({a}, [&] { return dot_loss(mul_scalar(a, -1.3), w4); });
    CHECK(r1.ok());
    CHECK(r2.ok());
  }
  SUBCASE("unary nonlinearities") {
    auto a = random_tensor({2, 3, 4, 4}, rng, -2.0, 2.0);
    auto pos = random_tensor({2, 3, 4, 4}, rng, 0.2, 3.0);
    for (auto op : {&numerics::exp, &numerics::tanh, &gelu}) {
      auto r = check_gradients({a}, [&] { return dot_loss(op(a), w4); });
      INFO(r.first_failure);
      CHECK(r.ok());
    }
    for (auto op : {&numerics::log, &numerics::log1p}) {
      auto r = check_gradients({pos}, [&] { return dot_loss(op(pos), w4); });
      INFO(r.first_failure);
      CHECK(r.ok());
    }
  }
  SUBCASE("relu away from the kink") {
    std::vector<double> v(16);
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2 ? 1 : -1) * mag(rng);
    auto a = Tensor::from_data({16}, v, true);
    auto w = random_tensor({16}, rng, -1, 1, false);
    auto r = check_gradients({a}, [&] { return dot_loss(relu(a), w); });
    CHECK(r.ok());
  }
  SUBCASE("reductions and reshapes") {
    auto a = random_tensor({2, 3, 4, 4}, rng);
    auto w3 = random_tensor({2, 4, 4}, rng, -1, 1, false);
    auto w1 = random_tensor({1, 3, 4, 4}, rng, -1, 1, false);
    auto w2 = random_tensor({6, 16}, rng, -1, 1, false);
    CHECK(check_gradients({a}, [&] { return mean(mul(a, a)); }).ok());
    CHECK(check_gradients({a}, [&] { return dot_loss(sum_axis(a, 1), w3); }).ok());
    CHECK(check_gradients({a}, [&] { return dot_loss(slice_leading(a, 1, 2), w1); }).ok());
    CHECK(check_gradients({a}, [&] { return dot_loss(reshape(a, {6, 16}), w2); }).ok());
  }
  SUBCASE("matmul") {
    auto a = random_tensor({3, 5}, rng);
    auto b = random_tensor({5, 4}, rng);
    auto w = random_tensor({3, 4}, rng, -1, 1, false);
    auto r = check_gradients({a, b}, [&] { return dot_loss(matmul(a, b), w); });
    INFO(r.first_failure);
    CHECK(r.ok());
  }
  SUBCASE("channel layer norm") {
    auto a = random_tensor({2, 3, 4, 4}, rng, -2, 2);
    auto g = random_tensor({3}, rng, 0.5, 1.5);
    auto b = random_tensor({3}, rng);
    auto r = check_gradients({a, g, b}, [&] { return dot_loss(channel_layer_norm(a, g, b), w4); });
    INFO(r.first_failure);
    CHECK(r.ok());
  }
  SUBCASE("softmax_channel") {
    auto a = random_tensor({2, 3, 4, 4}, rng, -2, 2);
    auto r = check_gradients({a}, [&] { return dot_loss(softmax_channel(a), w4); });
    INFO(r.first_failure);
    CHECK(r.ok());
  }
  SUBCASE("spatial_max_pool with well separated maxima") {
    // Values on a shuffled lattice with spacing 0.05, far above h.
    std::vector<double> v(2 * 3 * 16);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * double(i);
    std::shuffle(v.begin(), v.end(), rng);
    auto a = Tensor::from_data({2, 3, 4, 4}, v, true);
    auto w = random_tensor({2, 3}, rng, -1, 1, false);
    auto r = check_gradients({a}, [&] { return dot_loss(spatial_max_pool(a).values, w); });
    CHECK(r.ok());
  }
  SUBCASE("log_softmax_rows and select_columns") {
    auto a = random_tensor({4, 3}, rng, -2, 2);
    auto w = random_tensor({4, 3}, rng, -1, 1, false);
    CHECK(check_gradients({a}, [&] { return dot_loss(log_softmax_rows(a), w); }).ok());
    CHECK(check_gradients({a}, [&] { return sum(select_columns(log_softmax_rows(a), {0, 2, 1, 2})); }).ok());
  }
  SUBCASE("gather_cells") {
    auto a = random_tensor({2, 3, 2, 2}, rng);
    auto w = random_tensor({2, 3, 2, 2}, rng, -1, 1, false);
    std::vector<std::vector<int>> maps{{1, 0, 3, 2}, {0, -1, 0, 3}};
    auto r = check_gradients({a}, [&] { return dot_loss(gather_cells(a, maps), w); });
    CHECK(r.ok());
  }
}

TEST_CASE("finite differences: conv -> softmax_channel -> pool -> dot") {
  std::mt19937_64 rng(29);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto k = random_tensor({5, 3, 3, 3}, rng, -0.5, 0.5);
  auto w = random_tensor({2, 5}, rng, -1, 1, false);
  // A perturbation of h must not change an argmax; verify the margins first.
  {
    NoGradGuard g;
    auto z = softmax_channel(conv2d(x, k, 1, 1));
    for (std::size_t i = 0; i < 10; ++i) {
      std::vector<double> cells(z.data().begin() + i * 36, z.data().begin() + (i + 1) * 36);
      std::sort(cells.rbegin(), cells.rend());
      REQUIRE(cells[0] - cells[1] > 1e-4);
    }
  }
  auto r = check_gradients({x, k}, [&] { return dot_loss(spatial_max_pool(softmax_channel(conv2d(x, k, 1, 1))).values, w); });
  INFO(r.first_failure);
  CHECK(r.ok());
}

TEST_CASE("finite differences: random three-deep compositions") {
  std::mt19937_64 rng(31);
  using Unary = std::function<Tensor(const Tensor&)>;
  const std::vector<std::pair<std::string, Unary>> pool{
      {"tanh", [](const Tensor& t) { return numerics::tanh(t); }},
      {"gelu", [](const Tensor& t) { return gelu(t); }},
      {"softmax", [](const Tensor& t) { return softmax_channel(t); }},
      {"exp_scaled", [](const Tensor& t) { return numerics::exp(mul_scalar(t, 0.5)); }},
      {"square", [](const Tensor& t) { return mul(t, t); }},
      {"log1p_sq", [](const Tensor& t) { return numerics::log1p(mul(t, t)); }},
  };
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int trial = 0; trial < 30; ++trial) {
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto k = random_tensor({3, 3, 3, 3}, rng, -0.4, 0.4);
    auto w = random_tensor({2, 3, 3, 3}, rng, -1, 1, false);
    const auto a = pick(rng), b = pick(rng), c = pick(rng);
    INFO(pool[a].first << " -> " << pool[b].first << " -> " << pool[c].first);
    auto r = check_gradients({x, k}, [&] {
      return dot_loss(pool[c].second(pool[b].second(pool[a].second(conv2d(x, k, 1, 1)))), w);
    });
    INFO(r.first_failure);
    CHECK(r.ok());
  }
}

TEST_CASE("determinism: identical inputs give bit-identical forward values") {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto k = random_tensor({4, 3, 3, 3}, rng);
    return to_vec(softmax_channel(conv2d(x, k, 2, 1)).data());
  };
  CHECK(run() == run());
}

TEST_CASE("tensor construction validates sizes") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0}), ShapeError);
  auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == shape_numel(t.shape()));
  CHECK(t.at({1, 2}) == 6.0);
}

TEST_CASE("snapshot: byte layout") {
  auto t = Tensor::from_data({2}, {1.0, -2.5});
  std::ostringstream out(std::ios::binary);
  write_snapshot(out, t);
  const std::string bytes = out.str();
  REQUIRE(bytes.size() == 4 + 4 + 4 + 8 + 2 * 4);
  CHECK(bytes.substr(0, 4) == "PTNS");
  CHECK(bytes[4] == 1);   // version, little-endian
  CHECK(bytes[8] == 1);   // rank
  CHECK(bytes[12] == 2);  // dim 0
  // 1.0f = 0x3F800000 little-endian.
  CHECK(static_cast<unsigned char>(bytes[20]) == 0x00);
  CHECK(static_cast<unsigned char>(bytes[23]) == 0x3F);
}

TEST_CASE("snapshot: round trip preserves float32-representable values") {
  std::mt19937_64 rng(1);
  auto t = random_tensor({3, 1, 4}, rng, -5, 5, false);
  for (double& v : t.mutable_data()) v = double(float(v));
  std::stringstream buf;
  write_snapshot(buf, t);
  auto back = read_snapshot(buf);
  CHECK(back.shape() == t.shape());
  CHECK(to_vec(back.data()) == to_vec(t.data()));
}

TEST_CASE("snapshot: bad magic is rejected") {
  std::stringstream buf("XXXX\x01\x00\x00\x00");
  CHECK_THROWS_AS(read_snapshot(buf), IoError);
}

TEST_CASE("matmul and conv2d match naive loops at working sizes") {
  // Large enough to exercise blocked GEMM paths (a faulty BLAS kernel once
  // passed every small-shape test here).
  std::mt19937_64 rng(77);
  auto a = random_tensor({64, 128}, rng, -1.0, 1.0);
  auto b = random_tensor({128, 256}, rng, -1.0, 1.0);
  auto c = matmul(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 256; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 128; ++k) s += a.at({i, k}) * b.at({k, j});
      worst = std::max(worst, std::abs(s - c.at({i, j})));
    }
  CHECK(worst < 1e-10);

  auto x = random_tensor({4, 16, 9, 9}, rng, -1.0, 1.0);
  auto k = random_tensor({32, 16, 3, 3}, rng, -1.0, 1.0);
  auto y = conv2d(x, k, 2, 1);
  REQUIRE(y.shape() == Shape{4, 32, 5, 5});
  worst = 0.0;
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t o = 0; o < 32; ++o)
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t q = 0; q < 5; ++q) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < 16; ++ci)
            for (std::size_t i = 0; i < 3; ++i)
              for (std::size_t j = 0; j < 3; ++j) {
                const long yy = long(r * 2 + i) - 1, xx = long(q * 2 + j) - 1;
                if (yy < 0 || yy >= 9 || xx < 0 || xx >= 9) continue;
                s += x.at({n, ci, std::size_t(yy), std::size_t(xx)}) * k.at({o, ci, i, j});
              }
          worst = std::max(worst, std::abs(s - y.at({n, o, r, q})));
        }
  CHECK(worst < 1e-10);
}

TEST_CASE("conv2d gradients at a working size") {
  std::mt19937_64 rng(78);
  auto x = random_tensor({4, 128, 8, 8}, rng, -1.0, 1.0, true);
  auto k = random_tensor({64, 128, 1, 1}, rng, -1.0, 1.0, true);
  auto w = random_tensor({4, 64, 8, 8}, rng, -1.0, 1.0);
  sum(mul(conv2d(x, k, 1, 0), w)).backward();
  // Spot-check a spread of entries against central differences.
  auto check = [&](Tensor& t, std::size_t stride) {
    auto d = t.mutable_data();
    const auto g = to_vec(t.grad());
    for (std::size_t i = 0; i < d.size(); i += stride) {
      const double orig = d[i], h = 1e-3;
      NoGradGuard guard;
      d[i] = orig + h;
      const double up = sum(mul(conv2d(x, k, 1, 0), w)).item();
      d[i] = orig - h;
      const double down = sum(mul(conv2d(x, k, 1, 0), w)).item();
      d[i] = orig;
      CHECK(testing::gradients_agree(g[i], (up - down) / (2 * h)));
    }
  };
  check(k, 97);
  check(x, 1031);
}
