#pragma once

// DP-SGD building blocks: per-sample clipping and Gaussian noise.

#include <random>
#include <span>
#include <vector>

namespace fedtt {

struct DPConfig {
  bool enabled = false;
  double clip = 1.0;
  // Used directly unless derive_sigma is set.
  double sigma = 1.0;
  bool derive_sigma = false;
  double epsilon = 1.0;
  double delta = 1e-5;
  double sample_rate = 0.01;
  std::size_t steps = 100;
  double c0 = 1.0;

  void validate() const;
  // sigma, or the noise_multiplier() value when derive_sigma is set.
  double effective_sigma() const;
};

// g scaled down to L2 norm C when it exceeds C. Throws ConfigError if C <= 0.
std::vector<double> clip(std::span<const double> g, double C);
void clip_in_place(std::span<double> g, double C);

// (sum_i clip(g_i, C) + z) / B with z ~ N(0, C^2 sigma^2 I) drawn in
// coordinate order from rng.
std::vector<double> dp_batch_gradient(std::span<const std::vector<double>> per_sample, double C,
                                      double sigma, std::mt19937_64& rng);

// c0 * q * sqrt(T ln(1/delta)) / epsilon. Advisory only: no formal privacy
// accounting is done.
double noise_multiplier(double epsilon, double delta, double q, std::size_t T, double c0 = 1.0);

}  // namespace fedtt
