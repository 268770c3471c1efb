#include "fedtt/layers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "fedtt/error.hpp"
#include "fedtt/kernels.hpp"

namespace fedtt {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

void add_bias(Matrix& y, const std::vector<double>& b) {
  for (std::size_t i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (std::size_t j = 0; j < y.cols; ++j) yi[j] += b[j];
  }
}

void accumulate_column_sums(const Matrix& dy, std::vector<double>& out) {
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const double* di = dy.row(i);
    for (std::size_t j = 0; j < dy.cols; ++j) out[j] += di[j];
  }
}

}  // namespace

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "relu") return Nonlinearity::relu;
  if (name == "gelu") return Nonlinearity::gelu;
  if (name == "tanh") return Nonlinearity::tanh;
  throw ConfigError("unknown nonlinearity '" + std::string(name) + "'");
}

std::string_view to_string(Nonlinearity f) {
  switch (f) {
    case Nonlinearity::relu:
      return "relu";
    case Nonlinearity::gelu:
      return "gelu";
    case Nonlinearity::tanh:
      return "tanh";
  }
  return "relu";
}

double activate(Nonlinearity f, double x) {
  switch (f) {
    case Nonlinearity::relu:
      return x > 0.0 ? x : 0.0;
    case Nonlinearity::gelu:
      return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
    case Nonlinearity::tanh:
      return std::tanh(x);
  }
  return x;
}

double activate_derivative(Nonlinearity f, double x) {
  switch (f) {
    case Nonlinearity::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Nonlinearity::gelu: {
      const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    }
    case Nonlinearity::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

TensorizedLinear::TensorizedLinear(TTWeight weight, bool with_bias)
    : weight_(std::move(weight)),
      bias_(with_bias ? weight_.rows() : 0, 0.0),
      has_bias_(with_bias),
      mask_(weight_.order(), true) {}

void TensorizedLinear::set_trainable_mask(std::vector<bool> mask) {
  if (mask.size() != weight_.order())
    throw ShapeError("trainable mask has " + std::to_string(mask.size()) + " entries for " +
                     std::to_string(weight_.order()) + " factors");
  mask_ = std::move(mask);
}

Matrix TensorizedLinear::forward(const Matrix& x, Cache* cache) const {
  if (x.cols != in_features())
    throw ShapeError("tensorized linear: input width " + std::to_string(x.cols) + " != " +
                     std::to_string(in_features()));
  Cache local;
  Cache& c = cache ? *cache : local;
  Matrix y = c.contraction.forward(weight_, x);
  if (has_bias_) add_bias(y, bias_);
  return y;
}

TensorizedLinear::Grads TensorizedLinear::backward(const Matrix& dy, Cache& cache,
                                                   bool want_dx) const {
  // std::vector<bool> is not contiguous; hand the contraction a plain array.
  std::unique_ptr<bool[]> flags(new bool[mask_.size()]);
  for (std::size_t j = 0; j < mask_.size(); ++j) flags[j] = mask_[j];
  return backward(dy, cache, std::span<const bool>(flags.get(), mask_.size()), want_dx);
}

TensorizedLinear::Grads TensorizedLinear::backward(const Matrix& dy, Cache& cache,
                                                   std::span<const bool> need_grad,
                                                   bool want_dx) const {
  if (dy.cols != out_features())
    throw ShapeError("tensorized linear backward: gradient width " + std::to_string(dy.cols) +
                     " != " + std::to_string(out_features()));
  Grads g;
  g.dx = cache.contraction.backward(weight_, dy, need_grad, g.factors, want_dx);
  if (has_bias_) {
    g.bias.assign(bias_.size(), 0.0);
    accumulate_column_sums(dy, g.bias);
  }
  return g;
}

TensorizedAdapter::TensorizedAdapter(TensorizedLinear down, TensorizedLinear up, Nonlinearity act)
    : down_(std::move(down)), up_(std::move(up)), act_(act) {
  if (down_.out_features() != up_.in_features() || down_.in_features() != up_.out_features())
    throw ShapeError("adapter: down is " + std::to_string(down_.in_features()) + "->" +
                     std::to_string(down_.out_features()) + " but up is " +
                     std::to_string(up_.in_features()) + "->" +
                     std::to_string(up_.out_features()));
}

TensorizedAdapter TensorizedAdapter::initialized(std::size_t hidden, std::size_t bottleneck,
                                                 std::size_t rank, bool with_bias,
                                                 Nonlinearity act, std::mt19937_64& rng) {
  TensorizedLinear down(random_tt(shape_plan_for(bottleneck, hidden, rank), rng), with_bias);
  TensorizedLinear up(random_tt(shape_plan_for(hidden, bottleneck, rank), rng, true), with_bias);
  return TensorizedAdapter(std::move(down), std::move(up), act);
}

Matrix TensorizedAdapter::forward(const Matrix& h, Cache* cache) const {
  if (h.cols != hidden())
    throw ShapeError("adapter: input width " + std::to_string(h.cols) + " != " +
                     std::to_string(hidden()));
  Cache local;
  Cache& c = cache ? *cache : local;
  c.pre_act = down_.forward(h, &c.down);
  Matrix act = c.pre_act;
  for (double& v : act.data) v = activate(act_, v);
  Matrix out = up_.forward(act, &c.up);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += h.data[i];
  return out;
}

TensorizedAdapter::Grads TensorizedAdapter::backward(const Matrix& dout, Cache& cache,
                                                     bool want_dh, std::span<const bool> down_mask,
                                                     std::span<const bool> up_mask) const {
  std::unique_ptr<bool[]> down_flags(new bool[down_.weight().order()]);
  std::unique_ptr<bool[]> up_flags(new bool[up_.weight().order()]);
  for (std::size_t j = 0; j < down_.weight().order(); ++j)
    down_flags[j] = down_mask.empty() ? down_.trainable_mask()[j] : down_mask[j];
  for (std::size_t j = 0; j < up_.weight().order(); ++j)
    up_flags[j] = up_mask.empty() ? up_.trainable_mask()[j] : up_mask[j];
  const std::span<const bool> dm(down_flags.get(), down_.weight().order());
  const std::span<const bool> um(up_flags.get(), up_.weight().order());

  Grads g;
  const bool need_down =
      std::any_of(dm.begin(), dm.end(), [](bool v) { return v; }) || down_.has_bias();
  g.up = up_.backward(dout, cache.up, um, need_down || want_dh);
  if (!(need_down || want_dh)) {
    for (std::size_t j = 0; j < dm.size(); ++j)
      g.down.factors.emplace_back(down_.weight().factor(j).shape());
    return g;
  }
  Matrix dpre = std::move(g.up.dx);
  g.up.dx = Matrix();
  for (std::size_t i = 0; i < dpre.data.size(); ++i)
    dpre.data[i] *= activate_derivative(act_, cache.pre_act.data[i]);
  g.down = down_.backward(dpre, cache.down, dm, want_dh);
  if (want_dh) {
    g.dh = std::move(g.down.dx);
    g.down.dx = Matrix();
    for (std::size_t i = 0; i < g.dh.data.size(); ++i) g.dh.data[i] += dout.data[i];
  }
  return g;
}

Matrix DenseAdapter::forward(const Matrix& h) const {
  if (h.cols != down.cols)
    throw ShapeError("dense adapter: input width " + std::to_string(h.cols) + " != " +
                     std::to_string(down.cols));
  if (up.rows != down.cols || up.cols != down.rows)
    throw ShapeError("dense adapter: up/down shapes disagree");
  Matrix z = dense_forward(h, down, down_bias);
  for (double& v : z.data) v = activate(act, v);
  Matrix out = dense_forward(z, up, up_bias);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += h.data[i];
  return out;
}

DenseAdapter densify(const TensorizedAdapter& adapter) {
  DenseAdapter d;
  d.down = reconstruct(adapter.down().weight());
  d.up = reconstruct(adapter.up().weight());
  d.down_bias = adapter.down().has_bias() ? adapter.down().bias()
                                          : std::vector<double>(adapter.bottleneck(), 0.0);
  d.up_bias = adapter.up().has_bias() ? adapter.up().bias()
                                      : std::vector<double>(adapter.hidden(), 0.0);
  d.act = adapter.nonlinearity();
  return d;
}

Matrix dense_forward(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  if (x.cols != w.cols)
    throw ShapeError("dense layer: input width " + std::to_string(x.cols) + " != " +
                     std::to_string(w.cols));
  Matrix y(x.rows, w.rows);
  kernels::gemm_nt(x.rows, w.rows, x.cols, x.data.data(), x.cols, w.data.data(), w.cols,
                   y.data.data(), y.cols);
  if (!b.empty()) add_bias(y, b);
  return y;
}

Matrix dense_backward(const Matrix& x, const Matrix& dy, const Matrix& w, Matrix* dw,
                      std::vector<double>* db, bool want_dx) {
  if (dw)
    kernels::gemm_tn(w.rows, w.cols, x.rows, dy.data.data(), dy.cols, x.data.data(), x.cols,
                     dw->data.data(), dw->cols);
  if (db) accumulate_column_sums(dy, *db);
  if (!want_dx) return Matrix();
  Matrix dx(x.rows, x.cols);
  kernels::gemm_nn(x.rows, x.cols, w.rows, dy.data.data(), dy.cols, w.data.data(), w.cols,
                   dx.data.data(), dx.cols);
  return dx;
}

}  // namespace fedtt
