#pragma once

#include <cstddef>
#include <vector>

#include "pipnet/numerics/tensor.hpp"

// Differentiable primitives. Shapes must match exactly; the only implicit
// broadcast is tensor-with-scalar through the *_scalar variants.
namespace pipnet::numerics {

// Elementwise arithmetic.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double value);
Tensor mul_scalar(const Tensor& a, double value);

// Elementwise nonlinearities.
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor log1p(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation

// Reductions (64-bit accumulation).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);  // removes `axis`

Tensor reshape(const Tensor& a, Shape shape);
// Rows [begin, end) of the leading axis.
Tensor slice_leading(const Tensor& a, std::size_t begin, std::size_t end);

// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

// Normalizes each spatial location of [N,C,H,W] across its C channels, then
// applies per-channel scale `gamma` [C] and shift `beta` [C].
Tensor channel_layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                          double epsilon = 1e-5);

// Softmax across the channel axis of [N,P,H,W] at every location.
Tensor softmax_channel(const Tensor& input);

struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct PoolResult {
  Tensor values;                  // [N,P]
  std::vector<GridCell> argmax;   // N*P entries, row-major over (n,p)
};

// Max over (H,W) of [N,P,H,W]. Ties resolve to the first cell in row-major
// scan order; the gradient flows only to that cell.
PoolResult spatial_max_pool(const Tensor& input);

// Row-wise log-softmax of [N,C].
Tensor log_softmax_rows(const Tensor& input);

// out[n] = input[n, index[n]] for [N,C] input.
Tensor select_columns(const Tensor& input, const std::vector<std::size_t>& index);

// Spatial gather on [N,P,H,W]: out[n,:,l] = input[n,:,maps[n][l]] for
// l in [0,H*W); a negative source yields zeros.
Tensor gather_cells(const Tensor& input, const std::vector<std::vector<int>>& maps);

}  // namespace pipnet::numerics
