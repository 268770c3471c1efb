#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fedtt/error.hpp"
#include "fedtt/privacy.hpp"

using namespace fedtt;

namespace {
double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}
}  // namespace

TEST(Clip, HandValues) {
  const std::vector<double> g{3.0, 4.0};
  const auto c = clip(g, 1.0);
  EXPECT_NEAR(c[0], 0.6, 1e-14);
  EXPECT_NEAR(c[1], 0.8, 1e-14);
  EXPECT_EQ(clip(g, 10.0), g);  // norm 5 is under the bound
  EXPECT_EQ(clip(std::vector<double>{0.0, 0.0}, 1.0), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(clip(g, 0.0), ConfigError);
}

TEST(Clip, NormNeverExceedsBound) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> cdist(0.01, 5.0);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> v(1 + i % 17);
    for (auto& x : v) x = g(rng) * 3.0;
    const double C = cdist(rng);
    EXPECT_LE(norm(clip(v, C)), C * (1.0 + 1e-12));
  }
}

TEST(DpBatchGradient, NoNoiseIsClippedMean) {
  std::mt19937_64 rng(2);
  const std::vector<std::vector<double>> batch{{3.0, 4.0}, {0.1, 0.2}, {-6.0, 8.0}};
  const auto out = dp_batch_gradient(batch, 1.0, 0.0, rng);
  EXPECT_EQ(out[0], (0.6 + 0.1 - 0.6) / 3.0);
  EXPECT_EQ(out[1], (0.8 + 0.2 + 0.8) / 3.0);
  const std::vector<std::vector<double>> same{{0.3, -0.1}, {0.3, -0.1}};
  const auto two = dp_batch_gradient(same, 1.0, 0.0, rng);
  EXPECT_DOUBLE_EQ(two[0], 0.3);
  EXPECT_DOUBLE_EQ(two[1], -0.1);
  EXPECT_THROW(dp_batch_gradient({}, 1.0, 1.0, rng), ConfigError);
}

TEST(DpBatchGradient, NoiseStdIsClipTimesSigma) {
  std::mt19937_64 rng(3);
  const std::vector<std::vector<double>> zero{{0.0}};
  double s = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = dp_batch_gradient(zero, 2.0, 1.0, rng)[0];
    s += x;
    sq += x * x;
  }
  const double mean = s / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 2.0, 0.02 * 2.0);
}

TEST(NoiseMultiplier, FormulaAndMonotonicity) {
  EXPECT_NEAR(noise_multiplier(1.0, 1e-5, 0.01, 100), 0.01 * std::sqrt(100 * std::log(1e5)), 1e-14);
  EXPECT_NEAR(noise_multiplier(1.0, 1e-5, 0.01, 100), 0.3393, 1e-4);
  const double base = noise_multiplier(1.0, 1e-5, 0.01, 100);
  EXPECT_NEAR(noise_multiplier(1.0, 1e-5, 0.01, 200), base * std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(noise_multiplier(2.0, 1e-5, 0.01, 100), base / 2.0, 1e-14);
  EXPECT_GT(noise_multiplier(1.0, 1e-5, 0.02, 100), base);
  EXPECT_NEAR(noise_multiplier(1.0, 1e-5, 0.01, 100, 1.5), 1.5 * base, 1e-14);
  EXPECT_THROW(noise_multiplier(0.0, 1e-5, 0.01, 100), ConfigError);
  EXPECT_THROW(noise_multiplier(1.0, 1.0, 0.01, 100), ConfigError);
  EXPECT_THROW(noise_multiplier(1.0, 1e-5, 0.0, 100), ConfigError);
}

TEST(DPConfig, EffectiveSigmaAndValidation) {
  DPConfig cfg;
  cfg.enabled = true;
  cfg.sigma = 0.7;
  EXPECT_EQ(cfg.effective_sigma(), 0.7);
  cfg.derive_sigma = true;
  EXPECT_NEAR(cfg.effective_sigma(), 0.3393, 1e-4);
  cfg.delta = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = DPConfig{};
  cfg.enabled = true;
  cfg.clip = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
