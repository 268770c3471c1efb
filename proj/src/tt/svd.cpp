#include <Eigen/SVD>

#include "fedtt/error.hpp"
#include "fedtt/tt.hpp"

namespace fedtt {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

TtSvdResult tt_svd(const Matrix& m, const TensorShapePlan& plan) {
  plan.validate();
  if (m.rows != plan.matrix_rows || m.cols != plan.matrix_cols)
    throw ShapeError("tt_svd: matrix is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                     " but plan expects " + std::to_string(plan.matrix_rows) + "x" +
                     std::to_string(plan.matrix_cols));
  const std::size_t J = plan.dims.size();
  TtSvdResult result;
  result.requested_ranks = plan.ranks;

  std::vector<Tensor> factors;
  std::vector<double> carry = m.data;  // r_j * (k_j ... k_J), row-major
  std::size_t rank_in = 1;
  std::size_t rest = m.data.size();
  for (std::size_t j = 0; j + 1 < J; ++j) {
    const std::size_t rows = rank_in * plan.dims[j];
    rest /= plan.dims[j];
    Eigen::Map<const RowMat> unfold(carry.data(), static_cast<Eigen::Index>(rows),
                                    static_cast<Eigen::Index>(rest));
    Eigen::JacobiSVD<RowMat> svd(unfold, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const std::size_t max_rank = std::min(rows, rest);
    std::size_t rank = plan.ranks[j + 1];
    if (rank > max_rank) {
      rank = max_rank;
      result.clamped = true;
    }
    const auto& sv = svd.singularValues();
    const RowMat u = svd.matrixU();
    const RowMat v = svd.matrixV();

    Tensor g({rank_in, plan.dims[j], rank});
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t b = 0; b < rank; ++b)
        g[a * rank + b] = sv(static_cast<Eigen::Index>(b)) > 0.0
                              ? u(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))
                              : 0.0;
    factors.push_back(std::move(g));

    std::vector<double> next(rank * rest);
    for (std::size_t b = 0; b < rank; ++b) {
      const double s = sv(static_cast<Eigen::Index>(b));
      for (std::size_t c = 0; c < rest; ++c)
        next[b * rest + c] = s * v(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(b));
    }
    carry = std::move(next);
    rank_in = rank;
  }
  factors.emplace_back(std::vector<std::size_t>{rank_in, plan.dims[J - 1], 1}, std::move(carry));
  result.weight = TTWeight(std::move(factors), plan.row_dims(), plan.col_dims());
  return result;
}

}  // namespace fedtt
