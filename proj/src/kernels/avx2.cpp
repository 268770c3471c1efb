// Compiled with -mavx2 -mfma. Nothing in here may run before the dispatcher
// has confirmed CPU support.
#include <immintrin.h>

#include <cmath>
#include <vector>

#include "variants.hpp"

namespace fedtt::kernels::detail {
namespace {

constexpr std::size_t kRows = 4;

// Register-blocked C += A*B where A is reached through an accessor so the
// same microkernel serves both A and A^T layouts.
template <class AAt>
inline void gemm_blocked(std::size_t m, std::size_t n, std::size_t k, AAt a_at, const double* b,
                         std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d acc[kRows][2];
      for (std::size_t r = 0; r < kRows; ++r) {
        acc[r][0] = _mm256_loadu_pd(c + (i + r) * ldc + j);
        acc[r][1] = _mm256_loadu_pd(c + (i + r) * ldc + j + 4);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
        for (std::size_t r = 0; r < kRows; ++r) {
          const __m256d av = _mm256_set1_pd(a_at(i + r, p));
          acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
      }
      for (std::size_t r = 0; r < kRows; ++r) {
        _mm256_storeu_pd(c + (i + r) * ldc + j, acc[r][0]);
        _mm256_storeu_pd(c + (i + r) * ldc + j + 4, acc[r][1]);
      }
    }
    for (; j + 4 <= n; j += 4) {
      __m256d acc[kRows];
      for (std::size_t r = 0; r < kRows; ++r) acc[r] = _mm256_loadu_pd(c + (i + r) * ldc + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
        for (std::size_t r = 0; r < kRows; ++r)
          acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a_at(i + r, p)), b0, acc[r]);
      }
      for (std::size_t r = 0; r < kRows; ++r) _mm256_storeu_pd(c + (i + r) * ldc + j, acc[r]);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < kRows; ++r) {
        double s = c[(i + r) * ldc + j];
        for (std::size_t p = 0; p < k; ++p) s = std::fma(a_at(i + r, p), b[p * ldb + j], s);
        c[(i + r) * ldc + j] = s;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(ci + j);
      for (std::size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_set1_pd(a_at(i, p)), _mm256_loadu_pd(b + p * ldb + j), acc);
      _mm256_storeu_pd(ci + j, acc);
    }
    for (; j < n; ++j) {
      double s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a_at(i, p), b[p * ldb + j], s);
      ci[j] = s;
    }
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_blocked(m, n, k, [=](std::size_t i, std::size_t p) { return a[i * lda + p]; }, b, ldb, c,
               ldc);
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_blocked(m, n, k, [=](std::size_t i, std::size_t p) { return a[p * lda + i]; }, b, ldb, c,
               ldc);
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * ldb + p];
  gemm_nn_avx2(m, n, k, a, lda, bt.data(), n, c, ldc);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4)
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double s = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable kAvx2Table{
    "avx2", gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2, dot_avx2, axpy_avx2,
};

}  // namespace fedtt::kernels::detail
