#pragma once

// Tensor-train (TT) weights: a P x Q matrix stored as a chain of order-3
// factors G_j of shape (r_{j-1}, k_j, r_j) with r_0 = r_J = 1.
//
// Index convention: the matrix is reshaped to the tensor with dims
// row_dims ++ col_dims, entry (p, q) mapping to the row-major mixed-radix
// digits of p over row_dims followed by those of q over col_dims. This lets
// a vector be contracted against the trailing (column) factors directly.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "fedtt/tensor.hpp"

namespace fedtt {

struct TensorShapePlan {
  std::size_t matrix_rows = 1;
  std::size_t matrix_cols = 1;
  std::vector<std::size_t> dims;   // row dims followed by col dims
  std::vector<std::size_t> ranks;  // size dims.size() + 1, boundary ranks 1
  std::size_t row_modes = 0;       // how many leading dims belong to rows
  // Set when a dimension could not be split into factors <= 16.
  bool fallback = false;

  std::vector<std::size_t> row_dims() const;
  std::vector<std::size_t> col_dims() const;
  // Throws ConfigError when products or boundary ranks are inconsistent.
  void validate() const;
};

class TTWeight {
 public:
  TTWeight() = default;
  // Validates every invariant; throws ShapeError on violation.
  TTWeight(std::vector<Tensor> factors, std::vector<std::size_t> row_dims,
           std::vector<std::size_t> col_dims);

  // All-zero factors laid out according to plan.
  static TTWeight zeros(const TensorShapePlan& plan);

  std::size_t order() const { return factors_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t row_modes() const { return row_dims_.size(); }
  const std::vector<std::size_t>& row_dims() const { return row_dims_; }
  const std::vector<std::size_t>& col_dims() const { return col_dims_; }
  std::vector<std::size_t> dims() const;
  const std::vector<std::size_t>& ranks() const { return ranks_; }

  const std::vector<Tensor>& factors() const { return factors_; }
  const Tensor& factor(std::size_t j) const { return factors_.at(j); }
  // Mutable access for optimizers; the factor shape must not change.
  std::span<double> factor_values(std::size_t j) { return factors_.at(j).values(); }
  void set_factor(std::size_t j, Tensor value);

  std::size_t parameter_count() const;
  TensorShapePlan plan() const;

 private:
  std::vector<Tensor> factors_;
  std::vector<std::size_t> row_dims_;
  std::vector<std::size_t> col_dims_;
  std::vector<std::size_t> ranks_;
};

// C = A x_{s,t} B: contracts axis s of A with axis t of B (0-based axes).
// The result carries A's remaining axes followed by B's remaining axes.
Tensor mode_product(const Tensor& a, const Tensor& b, std::size_t s, std::size_t t);

enum class ChainOrder { left_to_right, right_to_left };

// Dense P x Q matrix represented by w.
Matrix reconstruct(const TTWeight& w, ChainOrder order = ChainOrder::left_to_right);

// reconstruct(w) * x without materializing the matrix.
std::vector<double> tt_matvec(const TTWeight& w, std::span<const double> x);

struct TtSvdResult {
  TTWeight weight;
  std::vector<std::size_t> requested_ranks;
  // True when any requested rank exceeded its unfolding's maximal rank.
  bool clamped = false;
};

// Sequential truncated SVD of m reshaped according to plan.
TtSvdResult tt_svd(const Matrix& m, const TensorShapePlan& plan);

// Sum over factors of r_{j-1} * k_j * r_j.
std::size_t param_count(const TensorShapePlan& plan);

// TT layout for a rows x cols matrix with every interior rank set to rank.
TensorShapePlan shape_plan_for(std::size_t rows, std::size_t cols, std::size_t rank);

// Near-balanced factorization of n into integers <= 16, ascending.
std::vector<std::size_t> balanced_factors(std::size_t n);

// Factor j ~ N(0, 1 / (r_{j-1} k_j)), so reconstructed entries have variance
// 1 / (P Q). When zero_last is set the final factor starts at zero.
TTWeight random_tt(const TensorShapePlan& plan, std::mt19937_64& rng, bool zero_last = false);

// Batched contraction of a TT weight with row vectors: Y = X W^T where W is
// the reconstructed matrix. The forward pass keeps the intermediate states
// needed for exact reverse-mode gradients.
class TtContraction {
 public:
  // x: batch x Q. Returns batch x P.
  Matrix forward(const TTWeight& w, const Matrix& x);

  // Gradients of sum(dy .* forward(x)) for the last forward call. factor_grads
  // gets one tensor per factor; entries with need_grad[j] false are left as
  // zero tensors and their contraction is skipped. Returns dx when want_dx.
  Matrix backward(const TTWeight& w, const Matrix& dy, std::span<const bool> need_grad,
                  std::vector<Tensor>& factor_grads, bool want_dx = true);

 private:
  std::size_t batch_ = 0;
  std::vector<std::vector<double>> col_inputs_;  // input of each column-factor step
  std::vector<std::vector<double>> row_inputs_;  // input of each row-factor step
};

}  // namespace fedtt
