#pragma once

#include <cstddef>

namespace pipnet::numerics::detail {

// Row-major C[m,n] = alpha * op(A) * op(B) + beta * C, where op(X) is X or
// its transpose. lda/ldb/ldc are row strides of the stored matrices.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);

}  // namespace pipnet::numerics::detail
