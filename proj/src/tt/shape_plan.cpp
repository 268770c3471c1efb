#include <algorithm>
#include <array>
#include <cmath>

#include "fedtt/error.hpp"
#include "fedtt/tt.hpp"

namespace fedtt {
namespace {

struct KnownShape {
  std::size_t rows;
  std::size_t cols;
  std::vector<std::size_t> dims;
  std::size_t row_modes;
};

// Layouts used for the BERT-base (768) and LLaMA-2-7B (4096) hidden sizes.
// The 768x768 classifier also admits an eightfold [8]*8 layout; the first
// listed one is used.
const std::vector<KnownShape>& known_shapes() {
  static const std::vector<KnownShape> table{
      {768, 64, {8, 8, 12, 8, 8}, 3},
      {64, 768, {8, 8, 12, 8, 8}, 2},
      {4096, 64, {16, 16, 16, 4, 4, 4}, 3},
      {64, 4096, {4, 4, 4, 16, 16, 16}, 3},
      {768, 768, {12, 8, 8, 8, 8, 12}, 3},
  };
  return table;
}

std::vector<std::size_t> prime_factors(std::size_t n) {
  std::vector<std::size_t> p;
  for (std::size_t f = 2; f * f <= n; ++f)
    while (n % f == 0) {
      p.push_back(f);
      n /= f;
    }
  if (n > 1) p.push_back(n);
  return p;
}

constexpr std::size_t kMaxFactor = 16;

}  // namespace

std::vector<std::size_t> balanced_factors(std::size_t n) {
  if (n <= 1) return {};
  const auto primes = prime_factors(n);
  // Aim for factors around 4, never above 16 when the primes allow it.
  std::size_t groups = static_cast<std::size_t>(std::lround(std::log2(static_cast<double>(n)) / 2));
  groups = std::clamp<std::size_t>(groups, 1, primes.size());
  for (;;) {
    std::vector<std::size_t> g(groups, 1);
    for (auto it = primes.rbegin(); it != primes.rend(); ++it)
      *std::min_element(g.begin(), g.end()) *= *it;
    std::sort(g.begin(), g.end());
    if (g.back() <= kMaxFactor || groups == primes.size()) return g;
    ++groups;
  }
}

TensorShapePlan shape_plan_for(std::size_t rows, std::size_t cols, std::size_t rank) {
  if (rows == 0 || cols == 0) throw ConfigError("shape_plan_for: rows and cols must be >= 1");
  if (rank == 0) throw ConfigError("shape_plan_for: rank must be >= 1");
  TensorShapePlan plan;
  plan.matrix_rows = rows;
  plan.matrix_cols = cols;
  bool found = false;
  for (const auto& k : known_shapes())
    if (k.rows == rows && k.cols == cols) {
      plan.dims = k.dims;
      plan.row_modes = k.row_modes;
      found = true;
      break;
    }
  if (!found) {
    auto rd = balanced_factors(rows);
    auto cd = balanced_factors(cols);
    if (rd.empty() && cd.empty()) rd.push_back(1);
    plan.row_modes = rd.size();
    plan.dims = rd;
    plan.dims.insert(plan.dims.end(), cd.begin(), cd.end());
    plan.fallback = std::any_of(plan.dims.begin(), plan.dims.end(),
                                [](std::size_t k) { return k > kMaxFactor; });
  }
  plan.ranks.assign(plan.dims.size() + 1, rank);
  plan.ranks.front() = 1;
  plan.ranks.back() = 1;
  plan.validate();
  return plan;
}

}  // namespace fedtt
