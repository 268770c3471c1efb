#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedtt/adamw.hpp"
#include "fedtt/error.hpp"
#include "fedtt/layers.hpp"

using namespace fedtt;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Matrix m(r, c);
  for (auto& v : m.data) v = g(rng);
  return m;
}

double weighted_sum(const Matrix& y, const Matrix& dy) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * dy.data[i];
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

TensorizedLinear random_linear(std::size_t out, std::size_t in, std::size_t rank,
                               std::mt19937_64& rng) {
  TensorizedLinear lin(random_tt(shape_plan_for(out, in, rank), rng), true);
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto& b : lin.bias()) b = g(rng);
  return lin;
}

}  // namespace

TEST(Activation, DerivativesMatchDifferences) {
  for (auto f : {Nonlinearity::relu, Nonlinearity::gelu, Nonlinearity::tanh})
    for (double x : {-2.3, -0.4, 0.3, 1.7}) {
      const double h = 1e-6;
      const double fd = (activate(f, x + h) - activate(f, x - h)) / (2 * h);
      EXPECT_NEAR(activate_derivative(f, x), fd, 1e-6) << to_string(f) << " at " << x;
    }
  EXPECT_EQ(parse_nonlinearity("gelu"), Nonlinearity::gelu);
  EXPECT_THROW(parse_nonlinearity("swish"), ConfigError);
}

TEST(TensorizedLinear, ZeroFactorsGiveBias) {
  TensorizedLinear lin(TTWeight::zeros(shape_plan_for(6, 8, 2)), true);
  lin.bias() = {1, 2, 3, 4, 5, 6};
  std::mt19937_64 rng(1);
  const Matrix y = lin.forward(random_matrix(3, 8, rng));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(y(r, c), static_cast<double>(c + 1));
}

TEST(TensorizedLinear, FullRankMatchesDenseLayer) {
  std::mt19937_64 rng(2);
  const Matrix w = random_matrix(12, 8, rng);
  TensorShapePlan plan = shape_plan_for(12, 8, 64);
  TensorizedLinear lin(tt_svd(w, plan).weight, true);
  std::normal_distribution<double> g;
  for (auto& b : lin.bias()) b = g(rng);
  const Matrix x = random_matrix(7, 8, rng);
  const Matrix y = lin.forward(x);
  const Matrix ref = dense_forward(x, w, lin.bias());
  for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_NEAR(y.data[i], ref.data[i], 1e-8);
}

TEST(TensorizedLinear, BatchOfOneMatchesBatch) {
  std::mt19937_64 rng(3);
  const auto lin = random_linear(16, 64, 4, rng);
  const Matrix x = random_matrix(9, 64, rng);
  const Matrix y = lin.forward(x);
  for (std::size_t r = 0; r < x.rows; ++r) {
    Matrix one(1, 64, std::vector<double>(x.row(r), x.row(r) + 64));
    const Matrix y1 = lin.forward(one);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_DOUBLE_EQ(y1(0, c), y(r, c));
  }
}

TEST(TensorizedLinear, RejectsWidthMismatch) {
  std::mt19937_64 rng(4);
  const auto lin = random_linear(4, 8, 2, rng);
  EXPECT_THROW(lin.forward(Matrix(2, 7)), ShapeError);
  TensorizedLinear::Cache cache;
  lin.forward(Matrix(2, 8), &cache);
  EXPECT_THROW(lin.backward(Matrix(2, 5), cache), ShapeError);
}

TEST(TensorizedLinear, GradientsMatchFiniteDifferences) {
  for (int inst = 0; inst < 20; ++inst) {
    std::mt19937_64 rng(100 + inst);
    const std::size_t out = inst % 2 ? 6 : 8, in = inst % 3 ? 12 : 16;
    auto lin = random_linear(out, in, 1 + inst % 4, rng);
    const Matrix x = random_matrix(3, in, rng);
    const Matrix dy = random_matrix(3, out, rng);
    TensorizedLinear::Cache cache;
    lin.forward(x, &cache);
    const auto g = lin.backward(dy, cache);
    const double h = 1e-5;
    auto loss = [&](const TensorizedLinear& l, const Matrix& xx) {
      return weighted_sum(l.forward(xx), dy);
    };
    for (std::size_t j = 0; j < lin.weight().order(); ++j) {
      auto vals = lin.weight().factor_values(j);
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const double keep = vals[k];
        vals[k] = keep + h;
        const double lp = loss(lin, x);
        vals[k] = keep - h;
        const double lm = loss(lin, x);
        vals[k] = keep;
        const double fd = (lp - lm) / (2 * h);
        ASSERT_LT(rel(fd, g.factors[j][k]), 1e-4) << "instance " << inst << " factor " << j;
      }
    }
    for (std::size_t k = 0; k < lin.bias().size(); ++k) {
      double s = 0.0;
      for (std::size_t r = 0; r < dy.rows; ++r) s += dy(r, k);
      EXPECT_NEAR(g.bias[k], s, 1e-12);
    }
    Matrix xp = x;
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      const double keep = xp.data[k];
      xp.data[k] = keep + h;
      const double lp = loss(lin, xp);
      xp.data[k] = keep - h;
      const double lm = loss(lin, xp);
      xp.data[k] = keep;
      ASSERT_LT(rel((lp - lm) / (2 * h), g.dx.data[k]), 1e-4);
    }
  }
}

TEST(TensorizedLinear, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const auto lin = random_linear(8, 16, 3, rng);
  TensorizedLinear::Cache cache;
  lin.forward(random_matrix(4, 16, rng), &cache);
  const auto g = lin.backward(Matrix(4, 8), cache);
  for (const auto& f : g.factors)
    for (double v : f.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.bias) EXPECT_EQ(v, 0.0);
  for (double v : g.dx.data) EXPECT_EQ(v, 0.0);
}

TEST(TensorizedLinear, FrozenFactorGetsExactZero) {
  std::mt19937_64 rng(6);
  auto lin = random_linear(8, 16, 3, rng);
  std::vector<bool> mask(lin.weight().order(), true);
  mask[1] = false;
  lin.set_trainable_mask(mask);
  TensorizedLinear::Cache cache;
  lin.forward(random_matrix(4, 16, rng), &cache);
  const auto g = lin.backward(random_matrix(4, 8, rng), cache);
  for (double v : g.factors[1].values()) EXPECT_EQ(v, 0.0);
  double other = 0.0;
  for (double v : g.factors[0].values()) other += std::abs(v);
  EXPECT_GT(other, 0.0);
  EXPECT_THROW(lin.set_trainable_mask({true}), ShapeError);
}

TEST(TensorizedAdapter, ZeroInitIsIdentity) {
  std::mt19937_64 rng(7);
  const auto ad = TensorizedAdapter::initialized(64, 16, 5, true, Nonlinearity::relu, rng);
  const Matrix h = random_matrix(5, 64, rng);
  EXPECT_EQ(ad.forward(h), h);
}

TEST(TensorizedAdapter, MatchesDenseReference) {
  std::mt19937_64 rng(8);
  for (auto act : {Nonlinearity::relu, Nonlinearity::gelu, Nonlinearity::tanh}) {
    TensorizedAdapter ad(random_linear(16, 64, 3, rng), random_linear(64, 16, 3, rng), act);
    const Matrix h = random_matrix(6, 64, rng);
    const Matrix y = ad.forward(h);
    const Matrix ref = densify(ad).forward(h);
    for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_NEAR(y.data[i], ref.data[i], 1e-8);
  }
}

TEST(TensorizedAdapter, RejectsMismatchedLayers) {
  std::mt19937_64 rng(9);
  EXPECT_THROW(TensorizedAdapter(random_linear(16, 64, 2, rng), random_linear(32, 16, 2, rng),
                                 Nonlinearity::relu),
               ShapeError);
  const auto ad = TensorizedAdapter::initialized(64, 16, 2, true, Nonlinearity::relu, rng);
  EXPECT_THROW(ad.forward(Matrix(2, 63)), ShapeError);
}

TEST(TensorizedAdapter, GradientsMatchFiniteDifferences) {
  for (int inst = 0; inst < 20; ++inst) {
    std::mt19937_64 rng(200 + inst);
    const auto act = inst % 2 ? Nonlinearity::gelu : Nonlinearity::tanh;
    TensorizedAdapter ad(random_linear(4, 16, 2 + inst % 3, rng),
                         random_linear(16, 4, 2 + inst % 3, rng), act);
    const Matrix h = random_matrix(3, 16, rng);
    const Matrix dy = random_matrix(3, 16, rng);
    TensorizedAdapter::Cache cache;
    ad.forward(h, &cache);
    const auto g = ad.backward(dy, cache);
    const double eps = 1e-5;
    auto check = [&](TensorizedLinear& layer, const TensorizedLinear::Grads& lg) {
      for (std::size_t j = 0; j < layer.weight().order(); ++j) {
        auto vals = layer.weight().factor_values(j);
        for (std::size_t k = 0; k < vals.size(); ++k) {
          const double keep = vals[k];
          vals[k] = keep + eps;
          const double lp = weighted_sum(ad.forward(h), dy);
          vals[k] = keep - eps;
          const double lm = weighted_sum(ad.forward(h), dy);
          vals[k] = keep;
          ASSERT_LT(rel((lp - lm) / (2 * eps), lg.factors[j][k]), 1e-4) << "instance " << inst;
        }
      }
      for (std::size_t k = 0; k < layer.bias().size(); ++k) {
        const double keep = layer.bias()[k];
        layer.bias()[k] = keep + eps;
        const double lp = weighted_sum(ad.forward(h), dy);
        layer.bias()[k] = keep - eps;
        const double lm = weighted_sum(ad.forward(h), dy);
        layer.bias()[k] = keep;
        ASSERT_LT(rel((lp - lm) / (2 * eps), lg.bias[k]), 1e-4);
      }
    };
    check(ad.down(), g.down);
    check(ad.up(), g.up);
    Matrix hp = h;
    for (std::size_t k = 0; k < h.data.size(); ++k) {
      const double keep = hp.data[k];
      hp.data[k] = keep + eps;
      const double lp = weighted_sum(ad.forward(hp), dy);
      hp.data[k] = keep - eps;
      const double lm = weighted_sum(ad.forward(hp), dy);
      hp.data[k] = keep;
      ASSERT_LT(rel((lp - lm) / (2 * eps), g.dh.data[k]), 1e-4);
    }
  }
}

TEST(DenseAdapter, ParameterCountAndIdentity) {
  DenseAdapter d;
  d.down = Matrix(64, 768);
  d.up = Matrix(768, 64);
  d.down_bias.assign(64, 0.0);
  d.up_bias.assign(768, 0.0);
  EXPECT_EQ(d.weight_parameter_count(), 98304u);
  std::mt19937_64 rng(10);
  const Matrix h = random_matrix(2, 768, rng);
  EXPECT_EQ(d.forward(h), h);
}

TEST(TensorizedAdapter, FarSmallerThanDense) {
  std::mt19937_64 rng(11);
  const auto ad = TensorizedAdapter::initialized(768, 64, 5, true, Nonlinearity::relu, rng);
  const std::size_t weights =
      ad.down().weight().parameter_count() + ad.up().weight().parameter_count();
  EXPECT_EQ(weights, 2u * 780u);
  EXPECT_EQ(ad.down().parameter_count() + ad.up().parameter_count(), 2u * 780u + 64u + 768u);
  EXPECT_LT(static_cast<double>(weights), 0.02 * 98304.0);
}

TEST(AdamW, ZeroGradientLeavesParams) {
  AdamWSlot slot;
  std::vector<double> p{1.5, -2.0};
  const std::vector<double> g{0.0, 0.0};
  for (int i = 0; i < 3; ++i) adamw_step({}, slot, p, g);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(slot.step, 3u);
}

TEST(AdamW, SingleScalarStepByHand) {
  AdamWConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.0};
  AdamWSlot slot;
  std::vector<double> p{1.0};
  adamw_step(cfg, slot, p, std::vector<double>{0.5});
  // m = 0.05, v = 0.00025; bias-corrected 0.5 and 0.25.
  const double expect = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  EXPECT_NEAR(p[0], expect, 1e-12);
  EXPECT_NEAR(slot.m[0], 0.05, 1e-15);
  EXPECT_NEAR(slot.v[0], 0.00025, 1e-15);
}

TEST(AdamW, DecoupledDecayShrinksGeometrically) {
  AdamWConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.5};
  AdamWSlot slot;
  std::vector<double> p{2.0};
  for (int i = 0; i < 10; ++i) adamw_step(cfg, slot, p, std::vector<double>{0.0});
  EXPECT_NEAR(p[0], 2.0 * std::pow(1.0 - 0.01 * 0.5, 10), 1e-12);
}

TEST(AdamW, NonFiniteGradientRejected) {
  AdamWSlot slot;
  std::vector<double> p{1.0, 2.0};
  EXPECT_THROW(adamw_step({}, slot, p, std::vector<double>{0.1, NAN}), NumericError);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(slot.step, 0u);
  EXPECT_THROW(adamw_step({}, slot, p, std::vector<double>{0.1}), ShapeError);
}

TEST(AdamW, StateSlotsMirrorSizes) {
  const std::vector<std::size_t> sizes{3, 1, 4};
  AdamWState st({}, sizes);
  ASSERT_EQ(st.slot_count(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(st.slot(i).m.size(), sizes[i]);
  std::vector<double> p(4, 1.0), g(4, 1.0);
  st.step(2, p, g);
  EXPECT_EQ(st.slot(2).step, 1u);
  st.slot(2).reset();
  EXPECT_EQ(st.slot(2).step, 0u);
  EXPECT_EQ(st.slot(2).m, std::vector<double>(4, 0.0));
}
