#pragma once

// Desk-scale encoder classifier: a frozen pre-LN transformer backbone with a
// tensorized adapter after the attention and MLP sublayers of every block and
// a trainable classification head (tensorized or dense).

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedtt/adamw.hpp"
#include "fedtt/layers.hpp"
#include "fedtt/tensor.hpp"

namespace fedtt {

enum class HeadMode { tensorized, dense };

HeadMode parse_head_mode(std::string_view name);
std::string_view to_string(HeadMode mode);

struct ModelConfig {
  std::size_t vocab = 32;
  std::size_t seq_len = 16;
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t blocks = 2;
  std::size_t mlp_hidden = 128;
  std::size_t num_classes = 2;
  std::size_t bottleneck = 16;
  std::size_t tt_rank = 5;
  HeadMode head_mode = HeadMode::tensorized;
  bool adapter_bias = true;
  bool adapters = true;
  Nonlinearity adapter_act = Nonlinearity::relu;

  void validate() const;
};

// Frozen transformer weights. The same type doubles as its own gradient
// accumulator during pretraining.
struct Backbone {
  struct Block {
    std::vector<double> ln1_g, ln1_b;
    Matrix wq, wk, wv, wo;
    std::vector<double> bq, bk, bv, bo;
    std::vector<double> ln2_g, ln2_b;
    Matrix w1, w2;
    std::vector<double> b1, b2;
  };

  std::size_t vocab = 0;
  std::size_t seq_len = 0;
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t mlp_hidden = 0;
  Matrix tok_emb;
  Matrix pos_emb;
  std::vector<Block> blocks;
  std::vector<double> lnf_g, lnf_b;

  static Backbone random(const ModelConfig& cfg, std::mt19937_64& rng);
  // Same shapes, every value zero.
  Backbone zeros_like() const;
  // Every parameter tensor in a fixed order.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
};

enum class ParamRole { adapter_factor, adapter_bias, head_factor, head_weight, head_bias };

struct ParamInfo {
  std::string name;
  std::vector<std::size_t> shape;
  ParamRole role = ParamRole::adapter_factor;
  int tt_group = -1;  // TT weight this factor belongs to
  int factor = -1;    // position within that weight
  int group_order = 0;  // J of that weight
  std::size_t size() const { return shape_product(shape); }
};

struct ParamLayout {
  std::vector<ParamInfo> entries;
  std::size_t total_size() const;
  std::size_t tt_group_count() const;
  friend bool operator==(const ParamLayout& a, const ParamLayout& b);
};

// Trainable values in layout order.
using ParamSet = std::vector<Tensor>;

// Throws ShapeError unless every tensor matches the layout entry's shape.
void check_param_set(const ParamLayout& layout, const ParamSet& set);

struct Batch {
  std::vector<int> tokens;  // batch * seq_len
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

struct LossAndGrad {
  double loss = 0.0;
  ParamSet grads;  // zero tensors where no gradient was requested
};

class ToyModel {
 public:
  ToyModel() = default;
  // Adapters and head drawn from rng; adapters start as the identity.
  ToyModel(std::shared_ptr<const Backbone> backbone, ModelConfig cfg, std::mt19937_64& rng);

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return *backbone_; }
  const ParamLayout& layout() const { return layout_; }

  ParamSet trainables() const;
  void set_trainables(const ParamSet& values);
  std::size_t trainable_count() const { return layout_.total_size(); }

  const std::vector<TensorizedAdapter>& attn_adapters() const { return attn_adapters_; }
  const std::vector<TensorizedAdapter>& mlp_adapters() const { return mlp_adapters_; }

  // Logits (batch x classes). Throws ConfigError for out-of-vocabulary tokens.
  Matrix logits(std::span<const int> tokens) const;

  // Mean cross-entropy and its gradient with respect to the trainables
  // flagged in need_grad (all when empty).
  LossAndGrad loss_and_grad(const Batch& batch, const std::vector<bool>& need_grad = {}) const;

  struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
  };
  Evaluation evaluate(const Batch& data, std::size_t chunk = 256) const;

 private:
  void build_layout();

  std::shared_ptr<const Backbone> backbone_;
  ModelConfig cfg_;
  std::vector<TensorizedAdapter> attn_adapters_;
  std::vector<TensorizedAdapter> mlp_adapters_;
  TensorizedLinear tt_head_;
  Matrix dense_head_;
  std::vector<double> dense_head_bias_;
  ParamLayout layout_;
};

// Centralized training of every backbone weight plus a throwaway dense head,
// used as the stand-in for a pretrained encoder.
struct PretrainConfig {
  std::size_t classes = 4;
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  AdamWConfig optimizer{3e-3, 0.9, 0.999, 1e-8, 0.0};
};

struct PretrainResult {
  std::shared_ptr<const Backbone> backbone;
  Matrix head;  // classes x d_model
  std::vector<double> head_bias;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

PretrainResult pretrain_backbone(const ModelConfig& cfg, const PretrainConfig& pcfg,
                                 const Batch& corpus, std::uint64_t seed);

// Loss and full backbone/head gradients for a dense-head classifier without
// adapters. Exposed for gradient checks.
struct BackboneLossAndGrad {
  double loss = 0.0;
  Backbone grad;
  Matrix head_grad;
  std::vector<double> head_bias_grad;
};
// Logits of the backbone with a dense head and no adapters.
Matrix backbone_logits(const Backbone& bb, const Matrix& head, const std::vector<double>& head_bias,
                       std::span<const int> tokens);

BackboneLossAndGrad backbone_loss_and_grad(const Backbone& bb, const Matrix& head,
                                           const std::vector<double>& head_bias,
                                           const Batch& batch);

}  // namespace fedtt
