#include "fedtt/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fedtt/error.hpp"
#include "fedtt/kernels.hpp"

namespace fedtt {
namespace {

constexpr double kLnEps = 1e-5;

// ---------------------------------------------------------------------------
// Layer norm

struct LnCache {
  Matrix xhat;
  std::vector<double> rstd;
};

Matrix ln_forward(const Matrix& x, const std::vector<double>& g, const std::vector<double>& b,
                  LnCache& c) {
  const std::size_t n = x.cols;
  Matrix y(x.rows, n);
  c.xhat = Matrix(x.rows, n);
  c.rstd.assign(x.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    c.rstd[i] = rstd;
    double* hi = c.xhat.row(i);
    double* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      hi[j] = (xi[j] - mean) * rstd;
      yi[j] = g[j] * hi[j] + b[j];
    }
  }
  return y;
}

Matrix ln_backward(const Matrix& dy, const LnCache& c, const std::vector<double>& g,
                   std::vector<double>* dg, std::vector<double>* db) {
  const std::size_t n = dy.cols;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix dx(dy.rows, n);
  std::vector<double> dxhat(n);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    const double* di = dy.row(i);
    const double* hi = c.xhat.row(i);
    double sum = 0.0;
    double sum_h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dxhat[j] = di[j] * g[j];
      sum += dxhat[j];
      sum_h += dxhat[j] * hi[j];
      if (dg) (*dg)[j] += di[j] * hi[j];
      if (db) (*db)[j] += di[j];
    }
    double* xi = dx.row(i);
    for (std::size_t j = 0; j < n; ++j)
      xi[j] = c.rstd[i] * (dxhat[j] - sum * inv_n - hi[j] * sum_h * inv_n);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention over (batch*seq, d_model) activations.

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t batch,
                       std::size_t seq, std::size_t heads, Matrix& out,
                       std::vector<double>& probs) {
  const std::size_t d = q.cols;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  out = Matrix(batch * seq, d);
  probs.assign(batch * heads * seq * seq, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * seq * d + h * dh;
      double* p = probs.data() + (b * heads + h) * seq * seq;
      kernels::gemm_nt(seq, seq, dh, q.data.data() + base, d, k.data.data() + base, d, p, seq);
      for (std::size_t i = 0; i < seq; ++i) {
        double* row = p + i * seq;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          row[j] *= scale;
          mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < seq; ++j) row[j] /= sum;
      }
      kernels::gemm_nn(seq, dh, seq, p, seq, v.data.data() + base, d, out.data.data() + base, d);
    }
}

void attention_backward(const Matrix& dout, const Matrix& q, const Matrix& k, const Matrix& v,
                        const std::vector<double>& probs, std::size_t batch, std::size_t seq,
                        std::size_t heads, Matrix& dq, Matrix& dk, Matrix& dv) {
  const std::size_t d = q.cols;
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Matrix(q.rows, d);
  dk = Matrix(q.rows, d);
  dv = Matrix(q.rows, d);
  std::vector<double> dp(seq * seq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * seq * d + h * dh;
      const double* p = probs.data() + (b * heads + h) * seq * seq;
      const double* dob = dout.data.data() + base;
      std::fill(dp.begin(), dp.end(), 0.0);
      kernels::gemm_nt(seq, seq, dh, dob, d, v.data.data() + base, d, dp.data(), seq);
      kernels::gemm_tn(seq, dh, seq, p, seq, dob, d, dv.data.data() + base, d);
      for (std::size_t i = 0; i < seq; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < seq; ++j) s += dp[i * seq + j] * p[i * seq + j];
        for (std::size_t j = 0; j < seq; ++j)
          dp[i * seq + j] = p[i * seq + j] * (dp[i * seq + j] - s) * scale;
      }
      kernels::gemm_nn(seq, dh, seq, dp.data(), seq, k.data.data() + base, d,
                       dq.data.data() + base, d);
      kernels::gemm_tn(seq, dh, seq, dp.data(), seq, q.data.data() + base, d,
                       dk.data.data() + base, d);
    }
}

void add_into(Matrix& acc, const Matrix& x) {
  kernels::axpy(acc.data.size(), 1.0, x.data.data(), acc.data.data());
}

// ---------------------------------------------------------------------------
// Encoder forward/backward shared by fine-tuning and pretraining.

struct BlockCache {
  LnCache ln1;
  Matrix n1, q, k, v, attn;
  std::vector<double> probs;
  TensorizedAdapter::Cache ad_attn;
  LnCache ln2;
  Matrix n2, u, gact;
  TensorizedAdapter::Cache ad_mlp;
};

struct EncoderCache {
  std::vector<int> tokens;
  std::size_t batch = 0;
  std::vector<BlockCache> blocks;
  LnCache lnf;
  Matrix nf;
};

struct AdapterSet {
  const std::vector<TensorizedAdapter>* attn = nullptr;
  const std::vector<TensorizedAdapter>* mlp = nullptr;
  bool enabled() const { return attn != nullptr; }
};

void check_tokens(const Backbone& bb, std::span<const int> tokens) {
  if (tokens.size() % bb.seq_len != 0)
    throw ShapeError("token count " + std::to_string(tokens.size()) +
                     " is not a multiple of sequence length " + std::to_string(bb.seq_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= bb.vocab)
      throw ConfigError("token " + std::to_string(tokens[i]) + " at position " +
                        std::to_string(i) + " is outside vocabulary of size " +
                        std::to_string(bb.vocab));
}

// Returns mean-pooled final hidden states (batch x d_model).
Matrix encode(const Backbone& bb, const AdapterSet& ad, std::span<const int> tokens,
              EncoderCache& c) {
  check_tokens(bb, tokens);
  const std::size_t S = bb.seq_len;
  const std::size_t D = bb.d_model;
  const std::size_t B = tokens.size() / S;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.batch = B;
  c.blocks.assign(bb.blocks.size(), {});

  Matrix x(B * S, D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      double* xr = x.row(b * S + s);
      const double* te = bb.tok_emb.row(static_cast<std::size_t>(tokens[b * S + s]));
      const double* pe = bb.pos_emb.row(s);
      for (std::size_t j = 0; j < D; ++j) xr[j] = te[j] + pe[j];
    }

  for (std::size_t l = 0; l < bb.blocks.size(); ++l) {
    const Backbone::Block& blk = bb.blocks[l];
    BlockCache& bc = c.blocks[l];
    bc.n1 = ln_forward(x, blk.ln1_g, blk.ln1_b, bc.ln1);
    bc.q = dense_forward(bc.n1, blk.wq, blk.bq);
    bc.k = dense_forward(bc.n1, blk.wk, blk.bk);
    bc.v = dense_forward(bc.n1, blk.wv, blk.bv);
    attention_forward(bc.q, bc.k, bc.v, B, S, bb.heads, bc.attn, bc.probs);
    Matrix a = dense_forward(bc.attn, blk.wo, blk.bo);
    if (ad.enabled()) a = (*ad.attn)[l].forward(a, &bc.ad_attn);
    add_into(x, a);

    bc.n2 = ln_forward(x, blk.ln2_g, blk.ln2_b, bc.ln2);
    bc.u = dense_forward(bc.n2, blk.w1, blk.b1);
    bc.gact = bc.u;
    for (double& val : bc.gact.data) val = activate(Nonlinearity::gelu, val);
    Matrix m = dense_forward(bc.gact, blk.w2, blk.b2);
    if (ad.enabled()) m = (*ad.mlp)[l].forward(m, &bc.ad_mlp);
    add_into(x, m);
  }
  c.nf = ln_forward(x, bb.lnf_g, bb.lnf_b, c.lnf);
  Matrix pooled(B, D);
  const double inv_s = 1.0 / static_cast<double>(S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      const double* r = c.nf.row(b * S + s);
      double* pr = pooled.row(b);
      for (std::size_t j = 0; j < D; ++j) pr[j] += r[j] * inv_s;
    }
  return pooled;
}

struct AdapterGrads {
  std::vector<TensorizedAdapter::Grads> attn;
  std::vector<TensorizedAdapter::Grads> mlp;
};

struct AdapterMasks {
  // Per block: down/up factor masks for the attention and MLP adapters.
  std::vector<std::unique_ptr<bool[]>> storage;
  std::vector<std::span<const bool>> attn_down, attn_up, mlp_down, mlp_up;
};

// Backpropagates d(loss)/d(pooled). With bb_grad null only adapter gradients
// are produced and the sweep stops at the lowest adapter.
void encode_backward(const Backbone& bb, const AdapterSet& ad, const AdapterMasks* masks,
                     EncoderCache& c, const Matrix& dpooled, Backbone* bb_grad,
                     AdapterGrads* ad_grads) {
  const std::size_t S = bb.seq_len;
  const std::size_t D = bb.d_model;
  const std::size_t B = c.batch;
  const std::size_t L = bb.blocks.size();
  const double inv_s = 1.0 / static_cast<double>(S);

  Matrix dnf(B * S, D);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      double* r = dnf.row(b * S + s);
      const double* pr = dpooled.row(b);
      for (std::size_t j = 0; j < D; ++j) r[j] = pr[j] * inv_s;
    }
  Matrix dx = ln_backward(dnf, c.lnf, bb.lnf_g, bb_grad ? &bb_grad->lnf_g : nullptr,
                          bb_grad ? &bb_grad->lnf_b : nullptr);
  if (ad_grads) {
    ad_grads->attn.assign(L, {});
    ad_grads->mlp.assign(L, {});
  }

  for (std::size_t l = L; l-- > 0;) {
    const Backbone::Block& blk = bb.blocks[l];
    Backbone::Block* gb = bb_grad ? &bb_grad->blocks[l] : nullptr;
    BlockCache& bc = c.blocks[l];

    Matrix dm = dx;
    if (ad.enabled()) {
      auto g = (*ad.mlp)[l].backward(dm, bc.ad_mlp, true,
                                     masks ? masks->mlp_down[l] : std::span<const bool>{},
                                     masks ? masks->mlp_up[l] : std::span<const bool>{});
      dm = std::move(g.dh);
      g.dh = Matrix();
      if (ad_grads) ad_grads->mlp[l] = std::move(g);
    }
    Matrix dg = dense_backward(bc.gact, dm, blk.w2, gb ? &gb->w2 : nullptr,
                               gb ? &gb->b2 : nullptr, true);
    for (std::size_t i = 0; i < dg.data.size(); ++i)
      dg.data[i] *= activate_derivative(Nonlinearity::gelu, bc.u.data[i]);
    Matrix dn2 =
        dense_backward(bc.n2, dg, blk.w1, gb ? &gb->w1 : nullptr, gb ? &gb->b1 : nullptr, true);
    add_into(dx, ln_backward(dn2, bc.ln2, blk.ln2_g, gb ? &gb->ln2_g : nullptr,
                             gb ? &gb->ln2_b : nullptr));

    Matrix da = dx;
    if (ad.enabled()) {
      const bool lowest = (l == 0 && !bb_grad);
      auto g = (*ad.attn)[l].backward(da, bc.ad_attn, !lowest,
                                      masks ? masks->attn_down[l] : std::span<const bool>{},
                                      masks ? masks->attn_up[l] : std::span<const bool>{});
      if (lowest) {
        if (ad_grads) ad_grads->attn[l] = std::move(g);
        return;
      }
      da = std::move(g.dh);
      g.dh = Matrix();
      if (ad_grads) ad_grads->attn[l] = std::move(g);
    }
    if (!bb_grad && !ad.enabled()) return;
    Matrix dattn = dense_backward(bc.attn, da, blk.wo, gb ? &gb->wo : nullptr,
                                  gb ? &gb->bo : nullptr, true);
    Matrix dq, dk, dv;
    attention_backward(dattn, bc.q, bc.k, bc.v, bc.probs, B, S, bb.heads, dq, dk, dv);
    Matrix dn1 =
        dense_backward(bc.n1, dq, blk.wq, gb ? &gb->wq : nullptr, gb ? &gb->bq : nullptr, true);
    add_into(dn1, dense_backward(bc.n1, dk, blk.wk, gb ? &gb->wk : nullptr,
                                 gb ? &gb->bk : nullptr, true));
    add_into(dn1, dense_backward(bc.n1, dv, blk.wv, gb ? &gb->wv : nullptr,
                                 gb ? &gb->bv : nullptr, true));
    add_into(dx, ln_backward(dn1, bc.ln1, blk.ln1_g, gb ? &gb->ln1_g : nullptr,
                             gb ? &gb->ln1_b : nullptr));
  }
  if (bb_grad) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t s = 0; s < S; ++s) {
        const double* r = dx.row(b * S + s);
        double* te = bb_grad->tok_emb.row(static_cast<std::size_t>(c.tokens[b * S + s]));
        double* pe = bb_grad->pos_emb.row(s);
        for (std::size_t j = 0; j < D; ++j) {
          te[j] += r[j];
          pe[j] += r[j];
        }
      }
  }
}

// Mean softmax cross-entropy; writes d(loss)/d(logits) when dlogits is set.
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* dlogits) {
  const std::size_t B = logits.rows;
  const std::size_t C = logits.cols;
  if (labels.size() != B) throw ShapeError("label count does not match batch");
  if (dlogits) *dlogits = Matrix(B, C);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = logits.row(b);
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C)
      throw ConfigError("label " + std::to_string(labels[b]) + " outside class range");
    const double mx = *std::max_element(z, z + C);
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - z[labels[b]];
    if (dlogits) {
      double* dz = dlogits->row(b);
      for (std::size_t j = 0; j < C; ++j) dz[j] = std::exp(z[j] - lse) * inv_b;
      dz[labels[b]] -= inv_b;
    }
  }
  return loss * inv_b;
}

Matrix gaussian_matrix(std::size_t r, std::size_t c, double sd, std::mt19937_64& rng) {
  Matrix m(r, c);
  std::normal_distribution<double> dist(0.0, sd);
  for (double& v : m.data) v = dist(rng);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

HeadMode parse_head_mode(std::string_view name) {
  if (name == "tensorized") return HeadMode::tensorized;
  if (name == "dense") return HeadMode::dense;
  throw ConfigError("unknown head mode '" + std::string(name) + "'");
}

std::string_view to_string(HeadMode mode) {
  return mode == HeadMode::tensorized ? "tensorized" : "dense";
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(vocab >= 1, "model.vocab must be >= 1");
  need(seq_len >= 1, "model.seq_len must be >= 1");
  need(d_model >= 1, "model.d_model must be >= 1");
  need(heads >= 1 && d_model % heads == 0, "model.heads must divide model.d_model");
  need(blocks >= 1, "model.blocks must be >= 1");
  need(mlp_hidden >= 1, "model.mlp_hidden must be >= 1");
  need(num_classes >= 2, "data.classes must be >= 2");
  need(bottleneck >= 1, "model.bottleneck must be >= 1");
  need(tt_rank >= 1, "model.tt_rank must be >= 1");
}

Backbone Backbone::random(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Backbone bb;
  bb.vocab = cfg.vocab;
  bb.seq_len = cfg.seq_len;
  bb.d_model = cfg.d_model;
  bb.heads = cfg.heads;
  bb.mlp_hidden = cfg.mlp_hidden;
  const std::size_t D = cfg.d_model;
  const std::size_t F = cfg.mlp_hidden;
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(D));
  const double sd_f = 1.0 / std::sqrt(static_cast<double>(F));
  bb.tok_emb = gaussian_matrix(cfg.vocab, D, 1.0, rng);
  bb.pos_emb = gaussian_matrix(cfg.seq_len, D, 1.0, rng);
  for (std::size_t l = 0; l < cfg.blocks; ++l) {
    Block b;
    b.ln1_g.assign(D, 1.0);
    b.ln1_b.assign(D, 0.0);
    b.wq = gaussian_matrix(D, D, sd_d, rng);
    b.wk = gaussian_matrix(D, D, sd_d, rng);
    b.wv = gaussian_matrix(D, D, sd_d, rng);
    b.wo = gaussian_matrix(D, D, sd_d, rng);
    b.bq.assign(D, 0.0);
    b.bk.assign(D, 0.0);
    b.bv.assign(D, 0.0);
    b.bo.assign(D, 0.0);
    b.ln2_g.assign(D, 1.0);
    b.ln2_b.assign(D, 0.0);
    b.w1 = gaussian_matrix(F, D, sd_d, rng);
    b.b1.assign(F, 0.0);
    b.w2 = gaussian_matrix(D, F, sd_f, rng);
    b.b2.assign(D, 0.0);
    bb.blocks.push_back(std::move(b));
  }
  bb.lnf_g.assign(D, 1.0);
  bb.lnf_b.assign(D, 0.0);
  return bb;
}

Backbone Backbone::zeros_like() const {
  Backbone z = *this;
  for (auto s : z.parameters()) std::fill(s.begin(), s.end(), 0.0);
  return z;
}

std::vector<std::span<double>> Backbone::parameters() {
  std::vector<std::span<double>> p{tok_emb.data, pos_emb.data};
  for (auto& b : blocks) {
    for (auto* v : {&b.ln1_g, &b.ln1_b}) p.emplace_back(*v);
    for (auto* m : {&b.wq, &b.wk, &b.wv, &b.wo}) p.emplace_back(m->data);
    for (auto* v : {&b.bq, &b.bk, &b.bv, &b.bo, &b.ln2_g, &b.ln2_b}) p.emplace_back(*v);
    p.emplace_back(b.w1.data);
    p.emplace_back(b.b1);
    p.emplace_back(b.w2.data);
    p.emplace_back(b.b2);
  }
  p.emplace_back(lnf_g);
  p.emplace_back(lnf_b);
  return p;
}

std::vector<std::span<const double>> Backbone::parameters() const {
  auto mut = const_cast<Backbone*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t ParamLayout::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.size();
  return n;
}

std::size_t ParamLayout::tt_group_count() const {
  int mx = -1;
  for (const auto& e : entries) mx = std::max(mx, e.tt_group);
  return static_cast<std::size_t>(mx + 1);
}

bool operator==(const ParamLayout& a, const ParamLayout& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].name != b.entries[i].name || a.entries[i].shape != b.entries[i].shape)
      return false;
  return true;
}

void check_param_set(const ParamLayout& layout, const ParamSet& set) {
  if (set.size() != layout.entries.size())
    throw ShapeError("parameter set has " + std::to_string(set.size()) + " tensors, layout " +
                     std::to_string(layout.entries.size()));
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set[i].shape() != layout.entries[i].shape)
      throw ShapeError("parameter '" + layout.entries[i].name + "' has shape " +
                       shape_to_string(set[i].shape()) + ", expected " +
                       shape_to_string(layout.entries[i].shape));
}

ToyModel::ToyModel(std::shared_ptr<const Backbone> backbone, ModelConfig cfg,
                   std::mt19937_64& rng)
    : backbone_(std::move(backbone)), cfg_(cfg) {
  cfg_.validate();
  if (!backbone_) throw ConfigError("model requires a backbone");
  if (backbone_->d_model != cfg_.d_model || backbone_->vocab != cfg_.vocab ||
      backbone_->seq_len != cfg_.seq_len || backbone_->blocks.size() != cfg_.blocks)
    throw ConfigError("backbone shape does not match model config");
  if (cfg_.adapters)
    for (std::size_t l = 0; l < cfg_.blocks; ++l) {
      attn_adapters_.push_back(TensorizedAdapter::initialized(
          cfg_.d_model, cfg_.bottleneck, cfg_.tt_rank, cfg_.adapter_bias, cfg_.adapter_act, rng));
      mlp_adapters_.push_back(TensorizedAdapter::initialized(
          cfg_.d_model, cfg_.bottleneck, cfg_.tt_rank, cfg_.adapter_bias, cfg_.adapter_act, rng));
    }
  if (cfg_.head_mode == HeadMode::tensorized) {
    tt_head_ = TensorizedLinear(
        random_tt(shape_plan_for(cfg_.num_classes, cfg_.d_model, cfg_.tt_rank), rng), true);
  } else {
    dense_head_ = gaussian_matrix(cfg_.num_classes, cfg_.d_model,
                                  1.0 / std::sqrt(static_cast<double>(cfg_.d_model)), rng);
    dense_head_bias_.assign(cfg_.num_classes, 0.0);
  }
  build_layout();
}

void ToyModel::build_layout() {
  layout_.entries.clear();
  int group = 0;
  auto add_linear = [&](const std::string& prefix, const TensorizedLinear& lin, bool head) {
    const int J = static_cast<int>(lin.weight().order());
    for (int j = 0; j < J; ++j) {
      ParamInfo e;
      e.name = prefix + ".factor" + std::to_string(j);
      e.shape = lin.weight().factor(static_cast<std::size_t>(j)).shape();
      e.role = head ? ParamRole::head_factor : ParamRole::adapter_factor;
      e.tt_group = group;
      e.factor = j;
      e.group_order = J;
      layout_.entries.push_back(std::move(e));
    }
    ++group;
    if (lin.has_bias()) {
      ParamInfo e;
      e.name = prefix + ".bias";
      e.shape = {lin.bias().size()};
      e.role = head ? ParamRole::head_bias : ParamRole::adapter_bias;
      layout_.entries.push_back(std::move(e));
    }
  };
  for (std::size_t l = 0; l < attn_adapters_.size(); ++l) {
    const std::string p = "block" + std::to_string(l);
    add_linear(p + ".attn_adapter.down", attn_adapters_[l].down(), false);
    add_linear(p + ".attn_adapter.up", attn_adapters_[l].up(), false);
    add_linear(p + ".mlp_adapter.down", mlp_adapters_[l].down(), false);
    add_linear(p + ".mlp_adapter.up", mlp_adapters_[l].up(), false);
  }
  if (cfg_.head_mode == HeadMode::tensorized) {
    add_linear("head", tt_head_, true);
  } else {
    layout_.entries.push_back(
        {"head.weight", {dense_head_.rows, dense_head_.cols}, ParamRole::head_weight, -1, -1, 0});
    layout_.entries.push_back(
        {"head.bias", {dense_head_bias_.size()}, ParamRole::head_bias, -1, -1, 0});
  }
}

ParamSet ToyModel::trainables() const {
  ParamSet out;
  auto add_linear = [&](const TensorizedLinear& lin) {
    for (const auto& f : lin.weight().factors()) out.push_back(f);
    if (lin.has_bias()) out.emplace_back(std::vector<std::size_t>{lin.bias().size()}, lin.bias());
  };
  for (std::size_t l = 0; l < attn_adapters_.size(); ++l) {
    add_linear(attn_adapters_[l].down());
    add_linear(attn_adapters_[l].up());
    add_linear(mlp_adapters_[l].down());
    add_linear(mlp_adapters_[l].up());
  }
  if (cfg_.head_mode == HeadMode::tensorized) {
    add_linear(tt_head_);
  } else {
    out.emplace_back(std::vector<std::size_t>{dense_head_.rows, dense_head_.cols},
                     dense_head_.data);
    out.emplace_back(std::vector<std::size_t>{dense_head_bias_.size()}, dense_head_bias_);
  }
  return out;
}

void ToyModel::set_trainables(const ParamSet& values) {
  check_param_set(layout_, values);
  std::size_t i = 0;
  auto set_linear = [&](TensorizedLinear& lin) {
    for (std::size_t j = 0; j < lin.weight().order(); ++j) lin.weight().set_factor(j, values[i++]);
    if (lin.has_bias()) {
      const auto v = values[i++].values();
      lin.bias().assign(v.begin(), v.end());
    }
  };
  for (std::size_t l = 0; l < attn_adapters_.size(); ++l) {
    set_linear(attn_adapters_[l].down());
    set_linear(attn_adapters_[l].up());
    set_linear(mlp_adapters_[l].down());
    set_linear(mlp_adapters_[l].up());
  }
  if (cfg_.head_mode == HeadMode::tensorized) {
    set_linear(tt_head_);
  } else {
    const auto w = values[i++].values();
    dense_head_.data.assign(w.begin(), w.end());
    const auto b = values[i++].values();
    dense_head_bias_.assign(b.begin(), b.end());
  }
}

Matrix ToyModel::logits(std::span<const int> tokens) const {
  EncoderCache c;
  AdapterSet ad;
  if (cfg_.adapters) ad = {&attn_adapters_, &mlp_adapters_};
  const Matrix pooled = encode(*backbone_, ad, tokens, c);
  if (cfg_.head_mode == HeadMode::tensorized) return tt_head_.forward(pooled);
  return dense_forward(pooled, dense_head_, dense_head_bias_);
}

LossAndGrad ToyModel::loss_and_grad(const Batch& batch,
                                    const std::vector<bool>& need_grad) const {
  const auto& entries = layout_.entries;
  if (!need_grad.empty() && need_grad.size() != entries.size())
    throw ShapeError("need_grad has " + std::to_string(need_grad.size()) + " flags for " +
                     std::to_string(entries.size()) + " trainables");
  auto needed = [&](std::size_t i) { return need_grad.empty() || need_grad[i]; };

  // Per TT weight factor masks, in layout group order.
  std::vector<std::vector<std::size_t>> group_entries(layout_.tt_group_count());
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].tt_group >= 0)
      group_entries[static_cast<std::size_t>(entries[i].tt_group)].push_back(i);
  AdapterMasks masks;
  auto make_mask = [&](std::size_t g) {
    const auto& idx = group_entries[g];
    masks.storage.emplace_back(new bool[idx.size()]);
    for (std::size_t j = 0; j < idx.size(); ++j) masks.storage.back()[j] = needed(idx[j]);
    return std::span<const bool>(masks.storage.back().get(), idx.size());
  };
  for (std::size_t l = 0; l < attn_adapters_.size(); ++l) {
    masks.attn_down.push_back(make_mask(4 * l));
    masks.attn_up.push_back(make_mask(4 * l + 1));
    masks.mlp_down.push_back(make_mask(4 * l + 2));
    masks.mlp_up.push_back(make_mask(4 * l + 3));
  }

  EncoderCache c;
  AdapterSet ad;
  if (cfg_.adapters) ad = {&attn_adapters_, &mlp_adapters_};
  const Matrix pooled = encode(*backbone_, ad, batch.tokens, c);
  if (pooled.rows != batch.labels.size())
    throw ShapeError("batch has " + std::to_string(pooled.rows) + " sequences but " +
                     std::to_string(batch.labels.size()) + " labels");

  LossAndGrad out;
  Matrix dlogits;
  Matrix dpooled;
  TensorizedLinear::Grads head_grads;
  Matrix dense_head_grad;
  std::vector<double> dense_bias_grad;
  if (cfg_.head_mode == HeadMode::tensorized) {
    TensorizedLinear::Cache hc;
    const Matrix z = tt_head_.forward(pooled, &hc);
    out.loss = cross_entropy(z, batch.labels, &dlogits);
    const std::size_t g = layout_.tt_group_count() - 1;
    std::span<const bool> hm = make_mask(g);
    head_grads = tt_head_.backward(dlogits, hc, hm, cfg_.adapters);
    dpooled = std::move(head_grads.dx);
  } else {
    const Matrix z = dense_forward(pooled, dense_head_, dense_head_bias_);
    out.loss = cross_entropy(z, batch.labels, &dlogits);
    dense_head_grad = Matrix(dense_head_.rows, dense_head_.cols);
    dense_bias_grad.assign(dense_head_bias_.size(), 0.0);
    dpooled = dense_backward(pooled, dlogits, dense_head_, &dense_head_grad, &dense_bias_grad,
                             cfg_.adapters);
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");

  AdapterGrads ag;
  if (cfg_.adapters) encode_backward(*backbone_, ad, &masks, c, dpooled, nullptr, &ag);

  out.grads.reserve(entries.size());
  auto push_linear = [&](TensorizedLinear::Grads& g) {
    for (auto& f : g.factors) out.grads.push_back(std::move(f));
    if (!g.bias.empty()) out.grads.emplace_back(std::vector<std::size_t>{g.bias.size()}, g.bias);
  };
  for (std::size_t l = 0; l < attn_adapters_.size(); ++l) {
    push_linear(ag.attn[l].down);
    push_linear(ag.attn[l].up);
    push_linear(ag.mlp[l].down);
    push_linear(ag.mlp[l].up);
  }
  if (cfg_.head_mode == HeadMode::tensorized) {
    push_linear(head_grads);
  } else {
    out.grads.emplace_back(std::vector<std::size_t>{dense_head_.rows, dense_head_.cols},
                           dense_head_grad.data);
    out.grads.emplace_back(std::vector<std::size_t>{dense_bias_grad.size()}, dense_bias_grad);
  }
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (!needed(i)) std::fill(out.grads[i].values().begin(), out.grads[i].values().end(), 0.0);
  check_param_set(layout_, out.grads);
  return out;
}

ToyModel::Evaluation ToyModel::evaluate(const Batch& data, std::size_t chunk) const {
  Evaluation ev;
  const std::size_t n = data.size();
  if (n == 0) return ev;
  const std::size_t S = cfg_.seq_len;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::span<const int> toks(data.tokens.data() + start * S, (end - start) * S);
    std::span<const int> labels(data.labels.data() + start, end - start);
    const Matrix z = logits(toks);
    loss_sum += cross_entropy(z, labels, nullptr) * static_cast<double>(end - start);
    for (std::size_t b = 0; b < z.rows; ++b) {
      const double* r = z.row(b);
      const auto best = static_cast<int>(std::max_element(r, r + z.cols) - r);
      if (best == labels[b]) ++correct;
    }
  }
  ev.loss = loss_sum / static_cast<double>(n);
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return ev;
}

Matrix backbone_logits(const Backbone& bb, const Matrix& head, const std::vector<double>& head_bias,
                       std::span<const int> tokens) {
  EncoderCache c;
  return dense_forward(encode(bb, {}, tokens, c), head, head_bias);
}

BackboneLossAndGrad backbone_loss_and_grad(const Backbone& bb, const Matrix& head,
                                           const std::vector<double>& head_bias,
                                           const Batch& batch) {
  EncoderCache c;
  const Matrix pooled = encode(bb, {}, batch.tokens, c);
  BackboneLossAndGrad out;
  Matrix dlogits;
  const Matrix z = dense_forward(pooled, head, head_bias);
  out.loss = cross_entropy(z, batch.labels, &dlogits);
  out.head_grad = Matrix(head.rows, head.cols);
  out.head_bias_grad.assign(head_bias.size(), 0.0);
  const Matrix dpooled =
      dense_backward(pooled, dlogits, head, &out.head_grad, &out.head_bias_grad, true);
  out.grad = bb.zeros_like();
  encode_backward(bb, {}, nullptr, c, dpooled, &out.grad, nullptr);
  return out;
}

PretrainResult pretrain_backbone(const ModelConfig& cfg, const PretrainConfig& pcfg,
                                 const Batch& corpus, std::uint64_t seed) {
  if (corpus.size() == 0) throw ConfigError("pretraining corpus is empty");
  std::mt19937_64 rng(seed);
  Backbone bb = Backbone::random(cfg, rng);
  Matrix head = gaussian_matrix(pcfg.classes, cfg.d_model,
                                1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);
  std::vector<double> head_bias(pcfg.classes, 0.0);

  auto params = bb.parameters();
  std::vector<AdamWSlot> slots(params.size() + 2);
  AdamWSlot head_slot, bias_slot;
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const std::size_t S = cfg.seq_len;
  PretrainResult res;
  for (std::size_t step = 0; step < pcfg.steps; ++step) {
    Batch b;
    for (std::size_t i = 0; i < pcfg.batch_size; ++i) {
      const std::size_t idx = pick(rng);
      b.tokens.insert(b.tokens.end(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(idx * S),
                      corpus.tokens.begin() + static_cast<std::ptrdiff_t>((idx + 1) * S));
      b.labels.push_back(corpus.labels[idx]);
    }
    auto g = backbone_loss_and_grad(bb, head, head_bias, b);
    if (!std::isfinite(g.loss))
      throw NumericError("non-finite pretraining loss at step " + std::to_string(step));
    auto grads = g.grad.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
      adamw_step(pcfg.optimizer, slots[i], params[i], grads[i]);
    adamw_step(pcfg.optimizer, head_slot, head.data, g.head_grad.data);
    adamw_step(pcfg.optimizer, bias_slot, head_bias, g.head_bias_grad);
    res.final_loss = g.loss;
  }
  // Training-set accuracy of the pretraining head, as a sanity signal.
  {
    EncoderCache c;
    std::size_t correct = 0;
    const std::size_t n = std::min<std::size_t>(corpus.size(), 1024);
    const Matrix pooled = encode(bb, {}, std::span<const int>(corpus.tokens.data(), n * S), c);
    const Matrix z = dense_forward(pooled, head, head_bias);
    for (std::size_t b = 0; b < n; ++b) {
      const double* r = z.row(b);
      if (std::max_element(r, r + z.cols) - r == corpus.labels[b]) ++correct;
    }
    res.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  }
  res.backbone = std::make_shared<const Backbone>(std::move(bb));
  res.head = std::move(head);
  res.head_bias = std::move(head_bias);
  return res;
}

}  // namespace fedtt
