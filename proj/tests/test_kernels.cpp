#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fedtt/kernels.hpp"

using namespace fedtt::kernels;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

// Reference product written independently of both tables.
double naive(const std::vector<double>& a, std::size_t lda, bool ta, const std::vector<double>& b,
             std::size_t ldb, bool tb, std::size_t i, std::size_t j, std::size_t k) {
  double s = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ta ? a[p * lda + i] : a[i * lda + p];
    const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
    s += av * bv;
  }
  return s;
}

const KernelTable* simd() {
  if (!cpu_supports(Isa::avx2)) return nullptr;
  return avx2_table();
}

struct Dims {
  std::size_t m, n, k;
};

const Dims kShapes[] = {{1, 1, 1},  {3, 5, 7},   {4, 8, 1},   {7, 9, 13},
                        {16, 16, 16}, {33, 17, 5}, {2, 65, 40}, {64, 3, 128}};

}  // namespace

TEST(Kernels, ScalarGemmMatchesNaive) {
  std::mt19937_64 rng(1);
  const auto& t = scalar_table();
  for (const auto& d : kShapes) {
    auto a = randn(d.m * d.k, rng), b = randn(d.k * d.n, rng);
    std::vector<double> c(d.m * d.n, 0.5);
    t.gemm_nn(d.m, d.n, d.k, a.data(), d.k, b.data(), d.n, c.data(), d.n);
    for (std::size_t i = 0; i < d.m; ++i)
      for (std::size_t j = 0; j < d.n; ++j)
        EXPECT_NEAR(c[i * d.n + j], 0.5 + naive(a, d.k, false, b, d.n, false, i, j, d.k), 1e-12);
  }
}

TEST(Kernels, SimdMatchesScalarAllVariants) {
  const KernelTable* v = simd();
  if (!v) GTEST_SKIP() << "AVX2 not available";
  const auto& s = scalar_table();
  std::mt19937_64 rng(2);
  for (const auto& d : kShapes) {
    // Padded leading dimensions exercise the stride handling.
    const std::size_t pad = 3;
    auto a = randn((d.m + pad) * (d.k + pad), rng);
    auto b = randn((d.k + pad) * (d.n + pad), rng);
    auto c0 = randn(d.m * (d.n + pad), rng);
    for (int variant = 0; variant < 3; ++variant) {
      auto cs = c0, cv = c0;
      const std::size_t ldc = d.n + pad;
      if (variant == 0) {
        s.gemm_nn(d.m, d.n, d.k, a.data(), d.k + pad, b.data(), d.n + pad, cs.data(), ldc);
        v->gemm_nn(d.m, d.n, d.k, a.data(), d.k + pad, b.data(), d.n + pad, cv.data(), ldc);
      } else if (variant == 1) {
        s.gemm_nt(d.m, d.n, d.k, a.data(), d.k + pad, b.data(), d.k + pad, cs.data(), ldc);
        v->gemm_nt(d.m, d.n, d.k, a.data(), d.k + pad, b.data(), d.k + pad, cv.data(), ldc);
      } else {
        s.gemm_tn(d.m, d.n, d.k, a.data(), d.m + pad, b.data(), d.n + pad, cs.data(), ldc);
        v->gemm_tn(d.m, d.n, d.k, a.data(), d.m + pad, b.data(), d.n + pad, cv.data(), ldc);
      }
      for (std::size_t i = 0; i < cs.size(); ++i)
        ASSERT_NEAR(cs[i], cv[i], 1e-12 * (1.0 + std::abs(cs[i])))
            << "variant " << variant << " m=" << d.m << " n=" << d.n << " k=" << d.k;
    }
  }
}

TEST(Kernels, SimdDotAxpyMatchScalar) {
  const KernelTable* v = simd();
  if (!v) GTEST_SKIP() << "AVX2 not available";
  std::mt19937_64 rng(3);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 64u, 1001u}) {
    auto x = randn(n, rng), y = randn(n, rng);
    EXPECT_NEAR(scalar_table().dot(n, x.data(), y.data()), v->dot(n, x.data(), y.data()), 1e-11);
    auto ys = y, yv = y;
    scalar_table().axpy(n, -0.75, x.data(), ys.data());
    v->axpy(n, -0.75, x.data(), yv.data());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(ys[i], yv[i], 1e-15 * (1.0 + std::abs(ys[i])));
  }
}

TEST(Kernels, ZeroSizedCallsAreNoops) {
  for (const KernelTable* t : {&scalar_table(), simd()}) {
    if (!t) continue;
    std::vector<double> c{1.0, 2.0};
    t->gemm_nn(1, 2, 0, nullptr, 0, nullptr, 2, c.data(), 2);
    t->gemm_tn(0, 2, 3, nullptr, 0, nullptr, 2, c.data(), 2);
    EXPECT_EQ(c, (std::vector<double>{1.0, 2.0}));
  }
}

TEST(Kernels, ForceIsaSwitchesActiveTable) {
  const Isa before = active_isa();
  force_isa(Isa::scalar);
  EXPECT_EQ(active_isa(), Isa::scalar);
  EXPECT_EQ(active().name, scalar_table().name);
  if (simd()) {
    force_isa(Isa::avx2);
    EXPECT_EQ(active_isa(), Isa::avx2);
  }
  force_isa(before);
}
