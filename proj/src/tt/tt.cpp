#include "fedtt/tt.hpp"

#include <cmath>
#include <numeric>

#include "fedtt/error.hpp"
#include "fedtt/kernels.hpp"

namespace fedtt {

std::vector<std::size_t> TensorShapePlan::row_dims() const {
  return {dims.begin(), dims.begin() + static_cast<std::ptrdiff_t>(row_modes)};
}

std::vector<std::size_t> TensorShapePlan::col_dims() const {
  return {dims.begin() + static_cast<std::ptrdiff_t>(row_modes), dims.end()};
}

void TensorShapePlan::validate() const {
  if (dims.empty()) throw ConfigError("shape plan has no dims");
  if (row_modes > dims.size()) throw ConfigError("shape plan row_modes exceeds dims");
  if (ranks.size() != dims.size() + 1)
    throw ConfigError("shape plan needs " + std::to_string(dims.size() + 1) + " ranks, got " +
                      std::to_string(ranks.size()));
  if (ranks.front() != 1 || ranks.back() != 1)
    throw ConfigError("shape plan boundary ranks must be 1");
  for (std::size_t r : ranks)
    if (r == 0) throw ConfigError("shape plan ranks must be >= 1");
  for (std::size_t k : dims)
    if (k == 0) throw ConfigError("shape plan dims must be >= 1");
  const auto rd = row_dims();
  const auto cd = col_dims();
  if (shape_product(rd) != matrix_rows || shape_product(cd) != matrix_cols)
    throw ConfigError("shape plan dims " + shape_to_string(dims) + " do not factor " +
                      std::to_string(matrix_rows) + "x" + std::to_string(matrix_cols));
}

TTWeight::TTWeight(std::vector<Tensor> factors, std::vector<std::size_t> row_dims,
                   std::vector<std::size_t> col_dims)
    : factors_(std::move(factors)), row_dims_(std::move(row_dims)), col_dims_(std::move(col_dims)) {
  const std::size_t J = factors_.size();
  if (J == 0) throw ShapeError("TT weight needs at least one factor");
  if (row_dims_.size() + col_dims_.size() != J)
    throw ShapeError("TT weight: " + std::to_string(row_dims_.size()) + " row dims + " +
                     std::to_string(col_dims_.size()) + " col dims != " + std::to_string(J) +
                     " factors");
  const auto all = dims();
  ranks_.assign(J + 1, 0);
  for (std::size_t j = 0; j < J; ++j) {
    const Tensor& g = factors_[j];
    if (g.order() != 3)
      throw ShapeError("TT factor " + std::to_string(j) + " must be order 3, has shape " +
                       shape_to_string(g.shape()));
    if (g.dim(1) != all[j])
      throw ShapeError("TT factor " + std::to_string(j) + " middle dim " +
                       std::to_string(g.dim(1)) + " != " + std::to_string(all[j]));
    if (j == 0) ranks_[0] = g.dim(0);
    if (g.dim(0) != ranks_[j])
      throw ShapeError("TT factor " + std::to_string(j) + " left rank " +
                       std::to_string(g.dim(0)) + " != previous right rank " +
                       std::to_string(ranks_[j]));
    ranks_[j + 1] = g.dim(2);
  }
  if (ranks_.front() != 1 || ranks_.back() != 1)
    throw ShapeError("TT boundary ranks must be 1, got " + shape_to_string(ranks_));
}

TTWeight TTWeight::zeros(const TensorShapePlan& plan) {
  plan.validate();
  std::vector<Tensor> f;
  for (std::size_t j = 0; j < plan.dims.size(); ++j)
    f.emplace_back(std::vector<std::size_t>{plan.ranks[j], plan.dims[j], plan.ranks[j + 1]});
  return TTWeight(std::move(f), plan.row_dims(), plan.col_dims());
}

std::size_t TTWeight::rows() const { return shape_product(row_dims_); }
std::size_t TTWeight::cols() const { return shape_product(col_dims_); }

std::vector<std::size_t> TTWeight::dims() const {
  std::vector<std::size_t> d = row_dims_;
  d.insert(d.end(), col_dims_.begin(), col_dims_.end());
  return d;
}

void TTWeight::set_factor(std::size_t j, Tensor value) {
  if (value.shape() != factors_.at(j).shape())
    throw ShapeError("set_factor: shape " + shape_to_string(value.shape()) + " != " +
                     shape_to_string(factors_[j].shape()));
  factors_[j] = std::move(value);
}

std::size_t TTWeight::parameter_count() const {
  std::size_t n = 0;
  for (const auto& g : factors_) n += g.size();
  return n;
}

TensorShapePlan TTWeight::plan() const {
  TensorShapePlan p;
  p.matrix_rows = rows();
  p.matrix_cols = cols();
  p.dims = dims();
  p.ranks = ranks_;
  p.row_modes = row_dims_.size();
  return p;
}

Tensor mode_product(const Tensor& a, const Tensor& b, std::size_t s, std::size_t t) {
  if (s >= a.order() || t >= b.order())
    throw ShapeError("mode_product: axis out of range for shapes " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  if (a.dim(s) != b.dim(t))
    throw ShapeError("mode_product: axis " + std::to_string(s) + " of " +
                     shape_to_string(a.shape()) + " does not match axis " + std::to_string(t) +
                     " of " + shape_to_string(b.shape()));
  const std::size_t k = a.dim(s);

  std::vector<std::size_t> perm_a;
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < a.order(); ++i)
    if (i != s) {
      perm_a.push_back(i);
      out_shape.push_back(a.dim(i));
    }
  perm_a.push_back(s);
  std::vector<std::size_t> perm_b{t};
  for (std::size_t i = 0; i < b.order(); ++i)
    if (i != t) {
      perm_b.push_back(i);
      out_shape.push_back(b.dim(i));
    }
  const Tensor ap = permute(a, perm_a);
  const Tensor bp = permute(b, perm_b);
  const std::size_t m = ap.size() / k;
  const std::size_t n = bp.size() / k;
  Tensor out(out_shape);
  kernels::gemm_nn(m, n, k, ap.data(), k, bp.data(), n, out.data(), n);
  return out;
}

Matrix reconstruct(const TTWeight& w, ChainOrder order) {
  const std::size_t J = w.order();
  const auto& r = w.ranks();
  const auto d = w.dims();
  std::vector<double> acc;
  if (order == ChainOrder::left_to_right) {
    // acc: (k_1 ... k_j) x r_j
    const auto v0 = w.factor(0).values();
    acc.assign(v0.begin(), v0.end());
    std::size_t lead = d[0];
    for (std::size_t j = 1; j < J; ++j) {
      const std::size_t inner = d[j] * r[j + 1];
      std::vector<double> next(lead * inner, 0.0);
      kernels::gemm_nn(lead, inner, r[j], acc.data(), r[j], w.factor(j).data(), inner, next.data(),
                       inner);
      acc = std::move(next);
      lead *= d[j];
    }
  } else {
    // acc: r_j x (k_{j+1} ... k_J)
    const auto vl = w.factor(J - 1).values();
    acc.assign(vl.begin(), vl.end());
    std::size_t trail = d[J - 1];
    for (std::size_t j = J - 1; j-- > 0;) {
      const std::size_t outer = r[j] * d[j];
      std::vector<double> next(outer * trail, 0.0);
      kernels::gemm_nn(outer, trail, r[j + 1], w.factor(j).data(), r[j + 1], acc.data(), trail,
                       next.data(), trail);
      acc = std::move(next);
      trail *= d[j];
    }
  }
  return Matrix(w.rows(), w.cols(), std::move(acc));
}

std::vector<double> tt_matvec(const TTWeight& w, std::span<const double> x) {
  if (x.size() != w.cols())
    throw ShapeError("tt_matvec: vector length " + std::to_string(x.size()) + " != " +
                     std::to_string(w.cols()));
  TtContraction c;
  Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return c.forward(w, xm).data;
}

std::size_t param_count(const TensorShapePlan& plan) {
  plan.validate();
  std::size_t n = 0;
  for (std::size_t j = 0; j < plan.dims.size(); ++j)
    n += plan.ranks[j] * plan.dims[j] * plan.ranks[j + 1];
  return n;
}

TTWeight random_tt(const TensorShapePlan& plan, std::mt19937_64& rng, bool zero_last) {
  TTWeight w = TTWeight::zeros(plan);
  const std::size_t J = w.order();
  for (std::size_t j = 0; j < J; ++j) {
    if (zero_last && j + 1 == J) break;
    const double sd = 1.0 / std::sqrt(static_cast<double>(plan.ranks[j] * plan.dims[j]));
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : w.factor_values(j)) v = dist(rng);
  }
  return w;
}

}  // namespace fedtt
