#include "pipnet/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gemm.hpp"
#include "pipnet/error.hpp"

namespace pipnet::numerics {

using detail::Node;
using detail::TensorImpl;

namespace {

using Backward = std::function<void(TensorImpl&)>;

Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, Backward backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  if (grad_mode_enabled()) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      impl->node = std::make_shared<Node>();
      for (auto& t : inputs) impl->node->inputs.push_back(t.impl());
      impl->node->backward = std::move(backward);
    }
  }
  return Tensor::wrap(std::move(impl));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw InvalidArgument(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// Unary elementwise op given f(x) and f'(x, f(x)).
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  require_defined(a, "unary");
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto in = a.impl();
  return record(a.shape(), std::move(out), {a}, [in, df](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(in->data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ia = a.impl(), ib = b.impl();
  return record(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    for (auto* in : {ia.get(), ib.get()}) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto ia = a.impl(), ib = b.impl();
  return record(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    if (ia->requires_grad) {
      auto& g = ia->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ib->requires_grad) {
      auto& g = ib->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ia = a.impl(), ib = b.impl();
  return record(a.shape(), std::move(out), {a, b}, [ia, ib](TensorImpl& self) {
    if (ia->requires_grad) {
      auto& g = ia->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ib->data[i];
    }
    if (ib->requires_grad) {
      auto& g = ib->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ia->data[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x * value; }, [value](double, double) { return value; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor log1p(const Tensor& a) {
  return unary(a, [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  // 1 + tanh(u) = 2 / (1 + exp(-2u)); a single exp is much cheaper than std::tanh.
  auto one_plus_tanh = [](double u) { return 2.0 / (1.0 + std::exp(-2.0 * u)); };
  return unary(
      a,
      [=](double x) { return 0.5 * x * one_plus_tanh(k * (x + c * x * x * x)); },
      [=](double x, double) {
        const double t = one_plus_tanh(k * (x + c * x * x * x)) - 1.0;
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * c * x * x);
      });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto in = a.impl();
  return record({}, {total}, {a}, [in](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_defined(a, "sum_axis");
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("sum_axis: axis " + std::to_string(axis) + " for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> out(outer * inner, 0.0);
  auto x = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * n + k) * inner + i];
  auto in = a.impl();
  return record(std::move(out_shape), std::move(out), {a}, [in, outer, inner, n](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[(o * n + k) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  auto in = a.impl();
  return record(std::move(shape), std::move(out), {a}, [in](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_leading(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_leading");
  if (a.rank() == 0 || begin > end || end > a.dim(0)) {
    throw ShapeError("slice_leading [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                     shape_string(a.shape()));
  }
  const std::size_t row = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.data().begin() + begin * row, a.data().begin() + end * row);
  auto in = a.impl();
  const std::size_t offset = begin * row;
  return record(std::move(shape), std::move(out), {a}, [in, offset](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  if (m && n && k) {
    detail::gemm(false, false, m, n, k, 1.0, a.data().data(), k,
                b.data().data(), n, 0.0, out.data(), n);
  }
  auto ia = a.impl(), ib = b.impl();
  return record({m, n}, std::move(out), {a, b}, [ia, ib, m, k, n](TensorImpl& self) {
    if (!m || !n || !k) return;
    if (ia->requires_grad) {  // dA = dC B^T
      auto& g = ia->ensure_grad();
      detail::gemm(false, true, m, k, n, 1.0, self.grad.data(), n,
                  ib->data.data(), n, 1.0, g.data(), k);
    }
    if (ib->requires_grad) {  // dB = A^T dC
      auto& g = ib->ensure_grad();
      detail::gemm(true, false, k, n, m, 1.0, ia->data.data(), k,
                  self.grad.data(), n, 1.0, g.data(), n);
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + " has " + std::to_string(cin) +
                     " channels but kernel " + shape_string(kernel.shape()) + " expects " +
                     std::to_string(kernel.dim(1)));
  }
  if (stride == 0) throw InvalidArgument("conv2d: stride must be >= 1");
  if (kh == 0 || kw == 0 || kh > h + 2 * padding || kw > w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                     shape_string(input.shape()) + " with padding " + std::to_string(padding));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t cols = batch * ho * wo;
  const std::size_t rows = cin * kh * kw;
  const std::size_t plane = ho * wo;

  // im2col: col[r][n*plane + l]
  auto col = std::make_shared<std::vector<double>>(rows * cols, 0.0);
  auto x = input.data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        double* dst = col->data() + ((c * kh + i) * kw + j) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          const double* src = x.data() + (n * cin + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t y = std::ptrdiff_t(oy * stride + i) - std::ptrdiff_t(padding);
            double* row_dst = dst + n * plane + oy * wo;
            if (y < 0 || y >= std::ptrdiff_t(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t xx = std::ptrdiff_t(ox * stride + j) - std::ptrdiff_t(padding);
              if (xx >= 0 && xx < std::ptrdiff_t(w)) row_dst[ox] = src[y * std::ptrdiff_t(w) + xx];
            }
          }
        }
      }

  std::vector<double> out_mat(cout * cols, 0.0);
  detail::gemm(false, false, cout, cols, rows, 1.0,
              kernel.data().data(), rows, col->data(), cols, 0.0, out_mat.data(), cols);
  std::vector<double> out(batch * cout * plane);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t n = 0; n < batch; ++n)
      std::copy_n(out_mat.data() + co * cols + n * plane, plane, out.data() + (n * cout + co) * plane);

  auto in = input.impl(), ker = kernel.impl();
  return record({batch, cout, ho, wo}, std::move(out), {input, kernel},
                [in, ker, col, batch, cin, h, w, cout, kh, kw, ho, wo, stride, padding, rows, cols,
                 plane](TensorImpl& self) {
                  std::vector<double> gout(cout * cols);
                  for (std::size_t co = 0; co < cout; ++co)
                    for (std::size_t n = 0; n < batch; ++n)
                      std::copy_n(self.grad.data() + (n * cout + co) * plane, plane,
                                  gout.data() + co * cols + n * plane);
                  if (ker->requires_grad) {
                    auto& g = ker->ensure_grad();
                    detail::gemm(false, true, cout, rows, cols, 1.0,
                                gout.data(), cols, col->data(), cols, 1.0, g.data(), rows);
                  }
                  if (in->requires_grad) {
                    std::vector<double> gcol(rows * cols, 0.0);
                    detail::gemm(true, false, rows, cols, cout, 1.0,
                                ker->data.data(), rows, gout.data(), cols, 0.0, gcol.data(), cols);
                    auto& g = in->ensure_grad();
                    for (std::size_t c = 0; c < cin; ++c)
                      for (std::size_t i = 0; i < kh; ++i)
                        for (std::size_t j = 0; j < kw; ++j) {
                          const double* src = gcol.data() + ((c * kh + i) * kw + j) * cols;
                          for (std::size_t n = 0; n < batch; ++n) {
                            double* dst = g.data() + (n * cin + c) * h * w;
                            for (std::size_t oy = 0; oy < ho; ++oy) {
                              const std::ptrdiff_t y = std::ptrdiff_t(oy * stride + i) - std::ptrdiff_t(padding);
                              if (y < 0 || y >= std::ptrdiff_t(h)) continue;
                              const double* row_src = src + n * plane + oy * wo;
                              for (std::size_t ox = 0; ox < wo; ++ox) {
                                const std::ptrdiff_t xx =
                                    std::ptrdiff_t(ox * stride + j) - std::ptrdiff_t(padding);
                                if (xx >= 0 && xx < std::ptrdiff_t(w)) dst[y * std::ptrdiff_t(w) + xx] += row_src[ox];
                              }
                            }
                          }
                        }
                  }
                });
}

Tensor channel_layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double epsilon) {
  require_rank(input, 4, "channel_layer_norm");
  const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("channel_layer_norm: gamma/beta must be [" + std::to_string(channels) + "], got " +
                     shape_string(gamma.shape()) + " and " + shape_string(beta.shape()));
  }
  auto xhat = std::make_shared<std::vector<double>>(input.numel());
  auto inv_std = std::make_shared<std::vector<double>>(batch * plane);
  std::vector<double> out(input.numel());
  auto x = input.data();
  auto gm = gamma.data(), bt = beta.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t l = 0; l < plane; ++l) {
      double mu = 0.0;
      for (std::size_t c = 0; c < channels; ++c) mu += x[(n * channels + c) * plane + l];
      mu /= double(channels);
      double var = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x[(n * channels + c) * plane + l] - mu;
        var += d * d;
      }
      var /= double(channels);
      const double is = 1.0 / std::sqrt(var + epsilon);
      (*inv_std)[n * plane + l] = is;
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t idx = (n * channels + c) * plane + l;
        (*xhat)[idx] = (x[idx] - mu) * is;
        out[idx] = gm[c] * (*xhat)[idx] + bt[c];
      }
    }
  auto in = input.impl(), ig = gamma.impl(), ib = beta.impl();
  return record(input.shape(), std::move(out), {input, gamma, beta},
                [in, ig, ib, xhat, inv_std, batch, channels, plane](TensorImpl& self) {
                  const auto& dy = self.grad;
                  if (ig->requires_grad || ib->requires_grad) {
                    auto& gg = ig->ensure_grad();
                    auto& gb = ib->ensure_grad();
                    for (std::size_t n = 0; n < batch; ++n)
                      for (std::size_t c = 0; c < channels; ++c)
                        for (std::size_t l = 0; l < plane; ++l) {
                          const std::size_t idx = (n * channels + c) * plane + l;
                          gg[c] += dy[idx] * (*xhat)[idx];
                          gb[c] += dy[idx];
                        }
                  }
                  if (!in->requires_grad) return;
                  auto& gx = in->ensure_grad();
                  for (std::size_t n = 0; n < batch; ++n)
                    for (std::size_t l = 0; l < plane; ++l) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t idx = (n * channels + c) * plane + l;
                        const double d = dy[idx] * ig->data[c];
                        mean_d += d;
                        mean_dx += d * (*xhat)[idx];
                      }
                      mean_d /= double(channels);
                      mean_dx /= double(channels);
                      const double is = (*inv_std)[n * plane + l];
                      for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t idx = (n * channels + c) * plane + l;
                        const double d = dy[idx] * ig->data[c];
                        gx[idx] += is * (d - mean_d - (*xhat)[idx] * mean_dx);
                      }
                    }
                });
}

Tensor softmax_channel(const Tensor& input) {
  require_rank(input, 4, "softmax_channel");
  const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (channels == 0) throw ShapeError("softmax_channel: needs at least one channel");
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t l = 0; l < plane; ++l) {
      const std::size_t base = n * channels * plane + l;
      double peak = x[base];
      for (std::size_t c = 1; c < channels; ++c) peak = std::max(peak, x[base + c * plane]);
      double total = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        out[base + c * plane] = std::exp(x[base + c * plane] - peak);
        total += out[base + c * plane];
      }
      for (std::size_t c = 0; c < channels; ++c) out[base + c * plane] /= total;
    }
  auto in = input.impl();
  return record(input.shape(), std::move(out), {input}, [in, batch, channels, plane](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t l = 0; l < plane; ++l) {
        const std::size_t base = n * channels * plane + l;
        double dot = 0.0;
        for (std::size_t c = 0; c < channels; ++c) dot += self.grad[base + c * plane] * self.data[base + c * plane];
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t idx = base + c * plane;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

PoolResult spatial_max_pool(const Tensor& input) {
  require_rank(input, 4, "spatial_max_pool");
  const std::size_t batch = input.dim(0), channels = input.dim(1), rows = input.dim(2), cols = input.dim(3);
  if (rows == 0 || cols == 0) throw ShapeError("spatial_max_pool: empty grid " + shape_string(input.shape()));
  const std::size_t plane = rows * cols;
  std::vector<double> out(batch * channels);
  auto flat_argmax = std::make_shared<std::vector<std::size_t>>(batch * channels);
  std::vector<GridCell> cells(batch * channels);
  auto x = input.data();
  for (std::size_t i = 0; i < batch * channels; ++i) {
    const double* src = x.data() + i * plane;
    std::size_t best = 0;
    for (std::size_t l = 1; l < plane; ++l)
      if (src[l] > src[best]) best = l;
    out[i] = src[best];
    (*flat_argmax)[i] = best;
    cells[i] = GridCell{best / cols, best % cols};
  }
  auto in = input.impl();
  Tensor values = record({batch, channels}, std::move(out), {input}, [in, flat_argmax, plane](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i * plane + (*flat_argmax)[i]] += self.grad[i];
  });
  return PoolResult{std::move(values), std::move(cells)};
}

Tensor log_softmax_rows(const Tensor& input) {
  require_rank(input, 2, "log_softmax_rows");
  const std::size_t rows = input.dim(0), cols = input.dim(1);
  if (cols == 0) throw ShapeError("log_softmax_rows: zero columns");
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = x.data() + r * cols;
    const double peak = *std::max_element(src, src + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(src[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c] - lse;
  }
  auto in = input.impl();
  return record(input.shape(), std::move(out), {input}, [in, rows, cols](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        g[r * cols + c] += self.grad[r * cols + c] - std::exp(self.data[r * cols + c]) * total;
    }
  });
}

Tensor select_columns(const Tensor& input, const std::vector<std::size_t>& index) {
  require_rank(input, 2, "select_columns");
  const std::size_t rows = input.dim(0), cols = input.dim(1);
  if (index.size() != rows) {
    throw ShapeError("select_columns: " + std::to_string(index.size()) + " indices for " + std::to_string(rows) +
                     " rows");
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw InvalidArgument("select_columns: column index out of range");
    out[r] = input.data()[r * cols + index[r]];
  }
  auto in = input.impl();
  return record({rows}, std::move(out), {input}, [in, index, cols](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t r = 0; r < index.size(); ++r) g[r * cols + index[r]] += self.grad[r];
  });
}

Tensor gather_cells(const Tensor& input, const std::vector<std::vector<int>>& maps) {
  require_rank(input, 4, "gather_cells");
  const std::size_t batch = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (maps.size() != batch) throw ShapeError("gather_cells: need one map per batch element");
  for (const auto& m : maps) {
    if (m.size() != plane) throw ShapeError("gather_cells: map size must equal H*W");
    for (int s : m)
      if (s >= int(plane)) throw InvalidArgument("gather_cells: source cell out of range");
  }
  std::vector<double> out(input.numel(), 0.0);
  auto x = input.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t l = 0; l < plane; ++l) {
        const int s = maps[n][l];
        if (s >= 0) out[(n * channels + c) * plane + l] = x[(n * channels + c) * plane + std::size_t(s)];
      }
  auto in = input.impl();
  return record(input.shape(), std::move(out), {input}, [in, maps, batch, channels, plane](TensorImpl& self) {
    if (!in->requires_grad) return;
    auto& g = in->ensure_grad();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t l = 0; l < plane; ++l) {
          const int s = maps[n][l];
          if (s >= 0) g[(n * channels + c) * plane + std::size_t(s)] += self.grad[(n * channels + c) * plane + l];
        }
  });
}

}  // namespace pipnet::numerics
