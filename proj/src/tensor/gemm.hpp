#pragma once

#include <cstddef>
#include <vector>

namespace evreg::detail {

// c[M,N] += a[M,K] @ b[K,N]; row-major with leading dimensions (row
// strides) lda, ldb, ldc.
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double* c, std::size_t ldc);

inline void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, const double* b, double* c) {
  gemm_acc(M, N, K, a, K, b, N, c, N);
}

// c[M,N] += a[K,M]^T @ b[K,N], same conventions.
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc);

// dst[C,R] = src[R,C]^T
void transpose_into(const double* src, std::size_t R, std::size_t C, std::vector<double>& dst);

}  // namespace evreg::detail
