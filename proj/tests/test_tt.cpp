#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedtt/error.hpp"
#include "fedtt/tt.hpp"

using namespace fedtt;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data) v = g(rng);
  return m;
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = g(rng);
  return t;
}

double rel_err(const Matrix& a, const Matrix& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    den += b.data[i] * b.data[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

TensorShapePlan plan_of(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_dims,
                        std::vector<std::size_t> col_dims, std::size_t rank) {
  TensorShapePlan p;
  p.matrix_rows = rows;
  p.matrix_cols = cols;
  p.dims = row_dims;
  p.dims.insert(p.dims.end(), col_dims.begin(), col_dims.end());
  p.row_modes = row_dims.size();
  p.ranks.assign(p.dims.size() + 1, rank);
  p.ranks.front() = p.ranks.back() = 1;
  return p;
}

// Entry-by-entry evaluation of the chain product, independent of the
// library's gemm-based contraction.
Matrix brute_reconstruct(const TTWeight& w) {
  const auto dims = w.dims();
  const std::size_t J = dims.size();
  Matrix out(w.rows(), w.cols());
  std::vector<std::size_t> idx(J, 0);
  for (std::size_t p = 0; p < w.rows(); ++p)
    for (std::size_t q = 0; q < w.cols(); ++q) {
      std::size_t rp = p, rq = q;
      for (std::size_t j = w.row_modes(); j-- > 0;) {
        idx[j] = rp % dims[j];
        rp /= dims[j];
      }
      for (std::size_t j = J; j-- > w.row_modes();) {
        idx[j] = rq % dims[j];
        rq /= dims[j];
      }
      std::vector<double> v{1.0};
      for (std::size_t j = 0; j < J; ++j) {
        const Tensor& g = w.factor(j);
        const std::size_t r0 = g.dim(0), r1 = g.dim(2);
        std::vector<double> nv(r1, 0.0);
        for (std::size_t a = 0; a < r0; ++a)
          for (std::size_t b = 0; b < r1; ++b) nv[b] += v[a] * g.at({a, idx[j], b});
        v = nv;
      }
      out(p, q) = v[0];
    }
  return out;
}

TTWeight random_weight(const TensorShapePlan& plan, std::mt19937_64& rng) {
  std::vector<Tensor> f;
  for (std::size_t j = 0; j < plan.dims.size(); ++j)
    f.push_back(random_tensor({plan.ranks[j], plan.dims[j], plan.ranks[j + 1]}, rng));
  return TTWeight(std::move(f), plan.row_dims(), plan.col_dims());
}

}  // namespace

TEST(ModeProduct, MatchesMatrixProduct) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3, 4}, rng);
  const Tensor c = mode_product(a, b, 1, 0);
  ASSERT_EQ(c.shape(), (std::vector<std::size_t>{2, 4}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at({i, k}) * b.at({k, j});
      EXPECT_NEAR(c.at({i, j}), s, 1e-14);
    }
}

TEST(ModeProduct, IdentityOnContractedAxis) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  const Tensor c = mode_product(a, eye, 1, 0);  // axes (0, 2, new)
  ASSERT_EQ(c.shape(), (std::vector<std::size_t>{2, 4, 3}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(c.at({i, k, j}), a.at({i, j, k}));
}

TEST(ModeProduct, AllOnesOrderThree) {
  const Tensor a({1, 2, 3}, 1.0), b({3, 2, 1}, 1.0);
  const Tensor c = mode_product(a, b, 2, 0);
  ASSERT_EQ(c.shape(), (std::vector<std::size_t>{1, 2, 2, 1}));
  for (double v : c.values()) EXPECT_EQ(v, 3.0);
}

TEST(ModeProduct, MismatchReportsBothShapes) {
  const Tensor a({2, 3}), b({4, 5});
  try {
    mode_product(a, b, 1, 0);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2"), std::string::npos);
    EXPECT_NE(msg.find(shape_to_string(a.shape())), std::string::npos);
    EXPECT_NE(msg.find(shape_to_string(b.shape())), std::string::npos);
  }
  EXPECT_THROW(mode_product(a, b, 5, 0), ShapeError);
}

TEST(TTWeight, RejectsBrokenInvariants) {
  // boundary rank != 1
  EXPECT_THROW(TTWeight({Tensor({2, 2, 1}), Tensor({1, 2, 1})}, {2}, {2}), ShapeError);
  // adjacent ranks disagree
  EXPECT_THROW(TTWeight({Tensor({1, 2, 3}), Tensor({2, 2, 1})}, {2}, {2}), ShapeError);
  // middle dim differs from k_j
  EXPECT_THROW(TTWeight({Tensor({1, 3, 1}), Tensor({1, 2, 1})}, {2}, {2}), ShapeError);
  // factor count differs from len(row_dims) + len(col_dims)
  EXPECT_THROW(TTWeight({Tensor({1, 2, 1})}, {2}, {2}), ShapeError);
  EXPECT_NO_THROW(TTWeight({Tensor({1, 2, 3}), Tensor({3, 2, 1})}, {2}, {2}));
}

TEST(Reconstruct, AllOnesTwoByTwo) {
  const TTWeight w({Tensor({1, 2, 1}, 1.0), Tensor({1, 2, 1}, 1.0)}, {2}, {2});
  const Matrix m = reconstruct(w);
  EXPECT_EQ(m, Matrix(2, 2, 1.0));
}

TEST(Reconstruct, ScalarChain) {
  const TTWeight w({Tensor({1, 1, 1}, 2.0), Tensor({1, 1, 1}, 3.0)}, {1}, {1});
  const Matrix m = reconstruct(w);
  ASSERT_EQ(m.rows, 1u);
  EXPECT_EQ(m(0, 0), 6.0);
}

TEST(Reconstruct, MatchesEntrywiseChainAndBothOrdersAgree) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto plan = plan_of(12, 8, {3, 4}, {2, 2, 2}, 1 + trial % 4);
    const TTWeight w = random_weight(plan, rng);
    const Matrix brute = brute_reconstruct(w);
    const Matrix l2r = reconstruct(w, ChainOrder::left_to_right);
    const Matrix r2l = reconstruct(w, ChainOrder::right_to_left);
    EXPECT_LT(rel_err(l2r, brute), 1e-12);
    for (std::size_t i = 0; i < l2r.data.size(); ++i)
      EXPECT_NEAR(l2r.data[i], r2l.data[i], 1e-12 * (1.0 + std::abs(l2r.data[i])));
  }
}

TEST(TtSvd, FullRankRoundTrip) {
  std::mt19937_64 rng(4);
  const Matrix m = random_matrix(6, 4, rng);
  const auto res = tt_svd(m, plan_of(6, 4, {2, 3}, {2, 2}, 64));
  EXPECT_TRUE(res.clamped);
  EXPECT_LT(rel_err(reconstruct(res.weight), m), 1e-10);

  const Matrix m8 = random_matrix(8, 8, rng);
  const auto r8 = tt_svd(m8, plan_of(8, 8, {8}, {8}, 8));
  EXPECT_FALSE(r8.clamped);
  EXPECT_LT(rel_err(reconstruct(r8.weight), m8), 1e-10);
}

TEST(TtSvd, RankOneOuterProduct) {
  std::mt19937_64 rng(5);
  const Matrix u = random_matrix(12, 1, rng), v = random_matrix(1, 8, rng);
  const Matrix m = matmul(u, v);
  const auto res = tt_svd(m, plan_of(12, 8, {12}, {8}, 1));
  EXPECT_LT(rel_err(reconstruct(res.weight), m), 1e-10);

  // With more modes, uv^T is TT rank 1 only when u and v split as Kronecker products.
  auto kron = [](const Matrix& a, const Matrix& b) {
    Matrix k(a.rows * b.rows, 1);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < b.rows; ++j) k(i * b.rows + j, 0) = a(i, 0) * b(j, 0);
    return k;
  };
  const Matrix uk = kron(random_matrix(3, 1, rng), random_matrix(4, 1, rng));
  const Matrix vk = kron(random_matrix(2, 1, rng), random_matrix(4, 1, rng));
  const Matrix mk = matmul(uk, transpose(vk));
  const auto rk = tt_svd(mk, plan_of(12, 8, {3, 4}, {2, 4}, 1));
  EXPECT_LT(rel_err(reconstruct(rk.weight), mk), 1e-10);
}

TEST(TtSvd, ZeroMatrixGivesZeroFactors) {
  const Matrix z(6, 4);
  const auto res = tt_svd(z, plan_of(6, 4, {2, 3}, {4}, 3));
  for (const auto& f : res.weight.factors())
    for (double v : f.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(reconstruct(res.weight), z);
}

TEST(TtSvd, ErrorNonIncreasingInRank) {
  std::mt19937_64 rng(6);
  const Matrix m = random_matrix(16, 16, rng);
  double prev = INFINITY;
  for (std::size_t r : {1u, 2u, 4u, 64u}) {
    const double err = rel_err(reconstruct(tt_svd(m, plan_of(16, 16, {4, 4}, {4, 4}, r)).weight), m);
    EXPECT_LE(err, prev + 1e-12) << "rank " << r;
    prev = err;
  }
  EXPECT_LT(prev, 1e-10);
}

TEST(TtSvd, RejectsMismatchedPlan) {
  const Matrix m(6, 4);
  EXPECT_THROW(tt_svd(m, plan_of(4, 6, {2, 2}, {2, 3}, 2)), ShapeError);
}

TEST(TtMatvec, AllOnesRankOne) {
  const TTWeight w({Tensor({1, 2, 1}, 1.0), Tensor({1, 2, 1}, 1.0)}, {2}, {2});
  const std::vector<double> x{1.0, 1.0};
  EXPECT_EQ(tt_matvec(w, x), (std::vector<double>{2.0, 2.0}));
}

TEST(TtMatvec, MatchesDenseOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto plan = plan_of(8, 12, {2, 4}, {3, 2, 2}, 1 + trial % 5);
    const TTWeight w = random_weight(plan, rng);
    const Matrix dense = brute_reconstruct(w);
    const Matrix x = random_matrix(12, 1, rng);
    const auto y = tt_matvec(w, x.data);
    const Matrix expect = matmul(dense, x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      num += (y[i] - expect.data[i]) * (y[i] - expect.data[i]);
      den += expect.data[i] * expect.data[i];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-8);
  }
}

TEST(TtMatvec, IdentityRoundTrip) {
  Matrix eye(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const auto w = tt_svd(eye, plan_of(4, 4, {2, 2}, {2, 2}, 16)).weight;
  const std::vector<double> x{0.5, -1.0, 2.0, 3.25};
  const auto y = tt_matvec(w, x);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(TtMatvec, RejectsWrongLength) {
  const TTWeight w({Tensor({1, 2, 1}, 1.0), Tensor({1, 2, 1}, 1.0)}, {2}, {2});
  const std::vector<double> x{1.0, 1.0, 1.0};
  EXPECT_THROW(tt_matvec(w, x), ShapeError);
}

TEST(ParamCount, AdapterShapeAtRankFive) {
  const auto plan = shape_plan_for(768, 64, 5);
  EXPECT_EQ(plan.dims, (std::vector<std::size_t>{8, 8, 12, 8, 8}));
  EXPECT_EQ(plan.ranks, (std::vector<std::size_t>{1, 5, 5, 5, 5, 1}));
  EXPECT_EQ(param_count(plan), 40u + 200u + 300u + 200u + 40u);
  EXPECT_EQ(param_count(plan), 780u);
}

TEST(ParamCount, SixEightsExactVersusLooseEstimate) {
  TensorShapePlan p = plan_of(512, 512, {8, 8, 8}, {8, 8, 8}, 5);
  EXPECT_EQ(param_count(p), 880u);
  EXPECT_LT(param_count(p), 6u * 25u * 8u);
}

TEST(ParamCount, RankOneIsSumOfDims) {
  TensorShapePlan p = plan_of(60, 14, {3, 4, 5}, {2, 7}, 1);
  EXPECT_EQ(param_count(p), 3u + 4u + 5u + 2u + 7u);
}

TEST(ShapePlan, KnownShapes) {
  using V = std::vector<std::size_t>;
  EXPECT_EQ(shape_plan_for(64, 768, 5).dims, (V{8, 8, 12, 8, 8}));
  EXPECT_EQ(shape_plan_for(4096, 64, 5).dims, (V{16, 16, 16, 4, 4, 4}));
  EXPECT_EQ(shape_plan_for(64, 4096, 5).dims, (V{4, 4, 4, 16, 16, 16}));
  EXPECT_EQ(shape_plan_for(768, 768, 5).dims, (V{12, 8, 8, 8, 8, 12}));
  for (auto [r, c] : {std::pair{768, 64}, {64, 768}, {4096, 64}, {64, 4096}, {768, 768}})
    EXPECT_LT(param_count(shape_plan_for(r, c, 5)), static_cast<std::size_t>(r * c));
}

TEST(ShapePlan, Degenerate) {
  const auto p = shape_plan_for(1, 1, 1);
  EXPECT_EQ(p.dims, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.ranks, (std::vector<std::size_t>{1, 1}));
  EXPECT_THROW(shape_plan_for(0, 4, 2), ConfigError);
  EXPECT_THROW(shape_plan_for(4, 4, 0), ConfigError);
}

TEST(ShapePlan, BalancedFactorsAndFallback) {
  using V = std::vector<std::size_t>;
  EXPECT_EQ(balanced_factors(16), (V{4, 4}));
  EXPECT_EQ(balanced_factors(64), (V{4, 4, 4}));
  for (std::size_t n : {2u, 12u, 30u, 96u, 360u, 1000u}) {
    const auto f = balanced_factors(n);
    std::size_t prod = 1;
    for (std::size_t k : f) {
      EXPECT_LE(k, 16u);
      prod *= k;
    }
    EXPECT_EQ(prod, n);
    EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
  }
  const auto prime = shape_plan_for(67, 8, 3);
  EXPECT_TRUE(prime.fallback);
  EXPECT_EQ(prime.dims.front(), 67u);
  EXPECT_FALSE(shape_plan_for(16, 64, 3).fallback);
}

TEST(Contraction, BatchedForwardMatchesDense) {
  std::mt19937_64 rng(8);
  const auto plan = plan_of(6, 8, {2, 3}, {2, 4}, 3);
  const TTWeight w = random_weight(plan, rng);
  const Matrix x = random_matrix(5, 8, rng);
  TtContraction c;
  const Matrix y = c.forward(w, x);
  const Matrix expect = matmul(x, transpose(brute_reconstruct(w)));
  EXPECT_LT(rel_err(y, expect), 1e-12);
}

TEST(Contraction, HandlesEmptySideModes) {
  std::mt19937_64 rng(9);
  // 1 x 16 (no row modes) and 16 x 1 (no column modes).
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{1, 16}, {16, 1}}) {
    const auto plan = shape_plan_for(r, c, 3);
    const TTWeight w = random_tt(plan, rng);
    const Matrix x = random_matrix(3, c, rng);
    TtContraction tc;
    EXPECT_LT(rel_err(tc.forward(w, x), matmul(x, transpose(reconstruct(w)))), 1e-12);
  }
}

TEST(RandomTt, ZeroLastAndScale) {
  std::mt19937_64 rng(10);
  const auto plan = shape_plan_for(64, 16, 5);
  const TTWeight z = random_tt(plan, rng, true);
  for (double v : z.factor(z.order() - 1).values()) EXPECT_EQ(v, 0.0);
  double sq = 0.0;
  const int draws = 200;
  for (int i = 0; i < draws; ++i) {
    const Matrix m = reconstruct(random_tt(plan, rng));
    for (double v : m.data) sq += v * v;
  }
  // Entry variance is close to 1 / (P Q).
  const double var = sq / (draws * 64.0 * 16.0);
  EXPECT_GT(var * 64 * 16, 0.3);
  EXPECT_LT(var * 64 * 16, 3.0);
}
