#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedtt/data.hpp"
#include "fedtt/error.hpp"

namespace fedtt {

Batch Corpus::gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.tokens.reserve(indices.size() * seq_len);
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ShapeError("example index " + std::to_string(i) + " out of range");
    auto s = sequence(i);
    b.tokens.insert(b.tokens.end(), s.begin(), s.end());
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

Corpus Corpus::subset(std::span<const std::size_t> indices) const {
  Corpus c;
  c.classes = classes;
  c.vocab = vocab;
  c.seq_len = seq_len;
  c.data = gather(indices);
  return c;
}

std::vector<std::size_t> Corpus::class_histogram() const {
  std::vector<std::size_t> h(classes, 0);
  for (int l : data.labels) ++h[static_cast<std::size_t>(l)];
  return h;
}

namespace {

// Row-stochastic transition matrix from logits.
std::vector<double> softmax_rows(const std::vector<double>& logits, std::size_t v) {
  std::vector<double> p(logits.size());
  for (std::size_t a = 0; a < v; ++a) {
    const double* z = logits.data() + a * v;
    const double mx = *std::max_element(z, z + v);
    double sum = 0.0;
    for (std::size_t b = 0; b < v; ++b) sum += (p[a * v + b] = std::exp(z[b] - mx));
    for (std::size_t b = 0; b < v; ++b) p[a * v + b] /= sum;
  }
  return p;
}

std::size_t draw(const double* probs, std::size_t n, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace

Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 2) throw ConfigError("data.classes must be >= 2");
  if (cfg.vocab < cfg.classes)
    throw ConfigError("data.vocab (" + std::to_string(cfg.vocab) + ") must be >= data.classes (" +
                      std::to_string(cfg.classes) + ")");
  if (cfg.per_class == 0) throw ConfigError("data.per_class must be >= 1");
  if (cfg.seq_len == 0) throw ConfigError("model.seq_len must be >= 1");
  if (!(cfg.class_signal >= 0.0)) throw ConfigError("data.class_signal must be >= 0");

  if (!(cfg.relatedness >= 0.0 && cfg.relatedness <= 1.0))
    throw ConfigError("data.relatedness must be in [0, 1]");
  const bool use_bank = cfg.relatedness > 0.0;
  if (use_bank && cfg.family_size < cfg.classes)
    throw ConfigError("task family of " + std::to_string(cfg.family_size) +
                      " tables cannot supply " + std::to_string(cfg.classes) + " classes");
  if (!cfg.members.empty()) {
    if (cfg.members.size() != cfg.classes) throw ConfigError("one family member per class");
    for (std::size_t m : cfg.members)
      if (m >= cfg.family_size) throw ConfigError("family member out of range");
  }

  const std::size_t V = cfg.vocab;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::mt19937_64 family_rng(cfg.family_seed);
  std::vector<double> shared(V * V);
  for (double& x : shared) x = gauss(family_rng);
  std::vector<std::vector<double>> bank;
  if (use_bank) {
    bank.assign(cfg.family_size, std::vector<double>(V * V));
    for (auto& t : bank)
      for (double& x : t) x = gauss(family_rng);
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> members = cfg.members;
  if (use_bank && members.empty()) {
    std::vector<std::size_t> all(cfg.family_size);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    members.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.classes));
  }
  const double own = std::sqrt(1.0 - cfg.relatedness * cfg.relatedness);

  std::vector<std::vector<double>> trans(cfg.classes);
  std::vector<std::vector<double>> start(cfg.classes);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::vector<double> logits = shared;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      double specific = own * gauss(rng);
      if (use_bank) specific += cfg.relatedness * bank[members[c]][i];
      logits[i] += cfg.class_signal * specific;
    }
    trans[c] = softmax_rows(logits, V);
    start[c].assign(V, 1.0 / static_cast<double>(V));
  }

  Corpus corpus;
  corpus.classes = cfg.classes;
  corpus.vocab = V;
  corpus.seq_len = cfg.seq_len;
  const std::size_t n = cfg.classes * cfg.per_class;
  std::vector<int> tokens(n * cfg.seq_len);
  std::vector<int> labels(n);
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      const std::size_t e = c * cfg.per_class + i;
      labels[e] = static_cast<int>(c);
      std::size_t tok = draw(start[c].data(), V, rng);
      for (std::size_t s = 0; s < cfg.seq_len; ++s) {
        tokens[e * cfg.seq_len + s] = static_cast<int>(tok);
        tok = draw(trans[c].data() + tok * V, V, rng);
      }
    }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  corpus.data.tokens = std::move(tokens);
  corpus.data.labels = std::move(labels);
  return corpus.subset(order);
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ConfigError("holdout fraction must be in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(corpus.classes);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    by_class[static_cast<std::size_t>(corpus.data.labels[i])].push_back(i);
  std::vector<std::size_t> train, held;
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    held.insert(held.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(held.begin(), held.end());
  return {corpus.subset(train), corpus.subset(held)};
}

}  // namespace fedtt
