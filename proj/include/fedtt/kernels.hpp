#pragma once

// Dense double-precision inner loops used by the contraction chain and the
// toy transformer. Every routine has a scalar reference implementation and,
// on x86-64 hosts with AVX2+FMA, a vectorized variant picked at startup.
//
// All matrices are row-major with explicit leading dimensions. The gemm
// routines accumulate into C (C += ...); callers zero C when needed.

#include <cstddef>
#include <string_view>

namespace fedtt::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  std::string_view name;
  // C[m,n] += A[m,k] * B[k,n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m,n] += A[m,k] * B[n,k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m,n] += A[k,m]^T * B[k,n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  double (*dot)(std::size_t n, const double* x, const double* y);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
};

const KernelTable& scalar_table();
// Null when the AVX2 translation unit was not built for this target.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);

// Table used by the library. Chosen once on first use: AVX2 when the CPU
// supports it, unless FEDTT_KERNELS=scalar is set in the environment.
const KernelTable& active();
Isa active_isa();

// Overrides the active table for the remainder of the process (tests only).
void force_isa(Isa isa);

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                    const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm_tn(m, n, k, a, lda, b, ldb, c, ldc);
}
inline double dot(std::size_t n, const double* x, const double* y) { return active().dot(n, x, y); }
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}

}  // namespace fedtt::kernels
