#include "gemm.hpp"

namespace evreg::detail {

namespace {

constexpr std::size_t kRows = 4, kCols = 8;

// One tile of c. kTransA selects a[r,p] (false) or a[p,r] (true). The full
// 4x8 case is instantiated with constant bounds so the accumulators stay in
// registers across the K loop.
template <bool kTransA, std::size_t kR, std::size_t kC>
inline void tile_fixed(std::size_t K, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                       std::size_t ldc) {
  double acc[kR][kC] = {};
  for (std::size_t p = 0; p < K; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < kR; ++r) {
      const double av = kTransA ? a[p * lda + r] : a[r * lda + p];
      for (std::size_t j = 0; j < kC; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (std::size_t r = 0; r < kR; ++r) {
    for (std::size_t j = 0; j < kC; ++j) c[r * ldc + j] += acc[r][j];
  }
}

template <bool kTransA>
inline void tile_edge(std::size_t rows, std::size_t cols, std::size_t K, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  double acc[kRows][kCols] = {};
  for (std::size_t p = 0; p < K; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < rows; ++r) {
      const double av = kTransA ? a[p * lda + r] : a[r * lda + p];
      for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * bp[j];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += acc[r][j];
  }
}

template <bool kTransA>
void gemm_impl(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < M; i += kRows) {
    const std::size_t rows = i + kRows <= M ? kRows : M - i;
    const double* ai = kTransA ? a + i : a + i * lda;
    for (std::size_t j = 0; j < N; j += kCols) {
      const std::size_t cols = j + kCols <= N ? kCols : N - j;
      double* cij = c + i * ldc + j;
      if (rows == kRows && cols == kCols) {
        tile_fixed<kTransA, kRows, kCols>(K, ai, lda, b + j, ldb, cij, ldc);
      } else {
        tile_edge<kTransA>(rows, cols, K, ai, lda, b + j, ldb, cij, ldc);
      }
    }
  }
}

}  // namespace

void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<false>(M, N, K, a, lda, b, ldb, c, ldc);
}

void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const double* a, std::size_t lda, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<true>(M, N, K, a, lda, b, ldb, c, ldc);
}

void transpose_into(const double* src, std::size_t R, std::size_t C, std::vector<double>& dst) {
  dst.resize(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) dst[c * R + r] = src[r * C + c];
  }
}

}  // namespace evreg::detail
