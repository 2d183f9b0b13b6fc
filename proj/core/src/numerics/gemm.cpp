#include "gemm.hpp"

#include <Eigen/Core>

namespace pipnet::numerics::detail {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  using Index = Eigen::Index;
  View out(c, Index(m), Index(n), Eigen::OuterStride<>(Index(ldc)));
  if (beta == 0.0) out.setZero();
  else if (beta != 1.0) out *= beta;
  if (m == 0 || n == 0 || k == 0) return;
  const ConstView A(a, trans_a ? Index(k) : Index(m), trans_a ? Index(m) : Index(k), Eigen::OuterStride<>(Index(lda)));
  const ConstView B(b, trans_b ? Index(n) : Index(k), trans_b ? Index(k) : Index(n), Eigen::OuterStride<>(Index(ldb)));
  if (trans_a && trans_b) out.noalias() += alpha * A.transpose() * B.transpose();
  else if (trans_a) out.noalias() += alpha * A.transpose() * B;
  else if (trans_b) out.noalias() += alpha * A * B.transpose();
  else out.noalias() += alpha * A * B;
}

}  // namespace pipnet::numerics::detail
