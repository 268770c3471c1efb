#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "fedtt/tensor.hpp"
#include "fedtt/tt.hpp"

namespace fedtt {

enum class Nonlinearity { relu, gelu, tanh };

Nonlinearity parse_nonlinearity(std::string_view name);
std::string_view to_string(Nonlinearity f);

double activate(Nonlinearity f, double x);
double activate_derivative(Nonlinearity f, double x);

// y = x W^T + b with W held as TT factors and never reconstructed.
class TensorizedLinear {
 public:
  struct Cache {
    TtContraction contraction;
  };
  struct Grads {
    std::vector<Tensor> factors;  // zero tensors for frozen factors
    std::vector<double> bias;     // empty when the layer has no bias
    Matrix dx;                    // empty when not requested
  };

  TensorizedLinear() = default;
  TensorizedLinear(TTWeight weight, bool with_bias);

  std::size_t in_features() const { return weight_.cols(); }
  std::size_t out_features() const { return weight_.rows(); }
  bool has_bias() const { return has_bias_; }

  const TTWeight& weight() const { return weight_; }
  TTWeight& weight() { return weight_; }
  const std::vector<double>& bias() const { return bias_; }
  std::vector<double>& bias() { return bias_; }

  // One flag per factor; frozen factors get exact zero gradients.
  const std::vector<bool>& trainable_mask() const { return mask_; }
  void set_trainable_mask(std::vector<bool> mask);

  std::size_t parameter_count() const { return weight_.parameter_count() + bias_.size(); }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  // Gradients of sum(dy .* forward(x)) for the input cached by forward().
  Grads backward(const Matrix& dy, Cache& cache, bool want_dx = true) const;
  // Same, with an explicit per-factor mask overriding the stored one.
  Grads backward(const Matrix& dy, Cache& cache, std::span<const bool> need_grad,
                 bool want_dx) const;

 private:
  TTWeight weight_;
  std::vector<double> bias_;
  bool has_bias_ = false;
  std::vector<bool> mask_;
};

// Residual bottleneck adapter: h + up(act(down(h))).
class TensorizedAdapter {
 public:
  struct Cache {
    TensorizedLinear::Cache down;
    TensorizedLinear::Cache up;
    Matrix pre_act;
  };
  struct Grads {
    TensorizedLinear::Grads down;
    TensorizedLinear::Grads up;
    Matrix dh;
  };

  TensorizedAdapter() = default;
  // Throws ShapeError unless down maps hidden -> bottleneck and up maps back.
  TensorizedAdapter(TensorizedLinear down, TensorizedLinear up, Nonlinearity act);

  // Down factors random, last up factor zero: the adapter starts as identity.
  static TensorizedAdapter initialized(std::size_t hidden, std::size_t bottleneck,
                                       std::size_t rank, bool with_bias, Nonlinearity act,
                                       std::mt19937_64& rng);

  const TensorizedLinear& down() const { return down_; }
  TensorizedLinear& down() { return down_; }
  const TensorizedLinear& up() const { return up_; }
  TensorizedLinear& up() { return up_; }
  Nonlinearity nonlinearity() const { return act_; }
  std::size_t hidden() const { return down_.in_features(); }
  std::size_t bottleneck() const { return down_.out_features(); }

  Matrix forward(const Matrix& h, Cache* cache = nullptr) const;
  // Empty masks fall back to the layers' stored trainable masks.
  Grads backward(const Matrix& dout, Cache& cache, bool want_dh = true,
                 std::span<const bool> down_mask = {}, std::span<const bool> up_mask = {}) const;

 private:
  TensorizedLinear down_;
  TensorizedLinear up_;
  Nonlinearity act_ = Nonlinearity::relu;
};

// Dense bottleneck adapter kept as a parameter-count and accuracy reference.
struct DenseAdapter {
  Matrix down;  // bottleneck x hidden
  Matrix up;    // hidden x bottleneck
  std::vector<double> down_bias;
  std::vector<double> up_bias;
  Nonlinearity act = Nonlinearity::relu;

  // Weight parameters only (biases excluded).
  std::size_t weight_parameter_count() const { return down.data.size() + up.data.size(); }
  Matrix forward(const Matrix& h) const;
};

// Dense adapter with the same function as a tensorized one.
DenseAdapter densify(const TensorizedAdapter& adapter);

// y = x W^T + b for a dense W (out x in). Helpers shared by the backbone.
Matrix dense_forward(const Matrix& x, const Matrix& w, const std::vector<double>& b);
// Accumulates dW and db when non-null; returns dx when want_dx.
Matrix dense_backward(const Matrix& x, const Matrix& dy, const Matrix& w, Matrix* dw,
                      std::vector<double>* db, bool want_dx);

}  // namespace fedtt
