#include "fedtt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "fedtt/error.hpp"
#include "fedtt/kernels.hpp"

namespace fedtt {

std::size_t shape_product(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_product(shape_))
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " given " +
                     std::to_string(data_.size()) + " values");
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeError("index order does not match tensor order");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (shape_product(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor permute(const Tensor& t, std::span<const std::size_t> perm) {
  const std::size_t order = t.order();
  if (perm.size() != order) throw ShapeError("permutation length does not match tensor order");
  std::vector<std::size_t> out_shape(order);
  std::vector<std::size_t> in_strides(order, 1);
  for (std::size_t a = order; a-- > 1;) in_strides[a - 1] = in_strides[a] * t.dim(a);
  std::vector<bool> seen(order, false);
  for (std::size_t i = 0; i < order; ++i) {
    if (perm[i] >= order || seen[perm[i]]) throw ShapeError("invalid axis permutation");
    seen[perm[i]] = true;
    out_shape[i] = t.dim(perm[i]);
  }
  Tensor out(out_shape);
  std::vector<std::size_t> idx(order, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < order; ++i) src += idx[i] * in_strides[perm[i]];
    out[flat] = t[src];
    for (std::size_t i = order; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeError("matrix value count does not match rows*cols");
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) + " by " +
                     std::to_string(b.rows) + "x" + std::to_string(b.cols));
  Matrix c(a.rows, b.cols);
  kernels::gemm_nn(a.rows, b.cols, a.cols, a.data.data(), a.cols, b.data.data(), b.cols,
                   c.data.data(), c.cols);
  return c;
}

double frobenius_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace fedtt
