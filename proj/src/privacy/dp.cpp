#include "fedtt/privacy.hpp"

#include <cmath>
#include <string>

#include "fedtt/error.hpp"

namespace fedtt {

void DPConfig::validate() const {
  if (!enabled) return;
  if (!(clip > 0.0)) throw ConfigError("dp.clip must be > 0");
  if (derive_sigma) {
    noise_multiplier(epsilon, delta, sample_rate, steps, c0);
  } else if (!(sigma >= 0.0)) {
    throw ConfigError("dp.sigma must be >= 0");
  }
}

double DPConfig::effective_sigma() const {
  return derive_sigma ? noise_multiplier(epsilon, delta, sample_rate, steps, c0) : sigma;
}

void clip_in_place(std::span<double> g, double C) {
  if (!(C > 0.0)) throw ConfigError("clip norm must be > 0");
  double sq = 0.0;
  for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= C) return;
  const double scale = C / norm;
  for (double& x : g) x *= scale;
}

std::vector<double> clip(std::span<const double> g, double C) {
  std::vector<double> out(g.begin(), g.end());
  clip_in_place(out, C);
  return out;
}

std::vector<double> dp_batch_gradient(std::span<const std::vector<double>> per_sample, double C,
                                      double sigma, std::mt19937_64& rng) {
  if (per_sample.empty()) throw ConfigError("DP batch is empty");
  if (!(sigma >= 0.0)) throw ConfigError("noise multiplier must be >= 0");
  const std::size_t n = per_sample.front().size();
  std::vector<double> sum(n, 0.0);
  std::vector<double> tmp;
  for (const auto& g : per_sample) {
    if (g.size() != n) throw ShapeError("per-sample gradients differ in length");
    tmp = g;
    clip_in_place(tmp, C);
    for (std::size_t i = 0; i < n; ++i) sum[i] += tmp[i];
  }
  if (sigma > 0.0) {
    std::normal_distribution<double> z(0.0, C * sigma);
    for (double& x : sum) x += z(rng);
  }
  const double inv = 1.0 / static_cast<double>(per_sample.size());
  for (double& x : sum) x *= inv;
  return sum;
}

double noise_multiplier(double epsilon, double delta, double q, std::size_t T, double c0) {
  if (!(epsilon > 0.0)) throw ConfigError("dp.epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp.delta must be in (0, 1)");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("dp.sample_rate must be in (0, 1]");
  if (T == 0) throw ConfigError("dp.steps must be >= 1");
  if (!(c0 > 0.0)) throw ConfigError("dp.c0 must be > 0");
  return c0 * q * std::sqrt(static_cast<double>(T) * std::log(1.0 / delta)) / epsilon;
}

}  // namespace fedtt
