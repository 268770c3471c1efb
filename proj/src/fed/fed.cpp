#include "fedtt/fed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedtt/error.hpp"

namespace fedtt {

Algorithm parse_algorithm(std::string_view name) {
  if (name == "fedtt") return Algorithm::fedtt;
  if (name == "fedtt_plus") return Algorithm::fedtt_plus;
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

std::string_view to_string(Algorithm a) { return a == Algorithm::fedtt ? "fedtt" : "fedtt_plus"; }

void FedConfig::validate() const {
  if (num_clients == 0) throw ConfigError("fed.num_clients must be >= 1");
  if (clients_per_round > num_clients)
    throw ConfigError("fed.clients_per_round (" + std::to_string(clients_per_round) +
                      ") exceeds fed.num_clients (" + std::to_string(num_clients) + ")");
  if (local_updates == 0) throw ConfigError("fed.local_updates must be >= 1");
  if (rounds == 0) throw ConfigError("fed.rounds must be >= 1");
  if (batch_size == 0) throw ConfigError("fed.batch_size must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("fed.lr must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("fed.beta1 must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("fed.beta2 must be in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ConfigError("fed.eps must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("fed.weight_decay must be >= 0");
  if (!(bytes_per_param > 0.0)) throw ConfigError("fed.bytes_per_param must be > 0");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  dp.validate();
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream) {
  // splitmix64 finalizer over a mix of the two inputs
  std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t client_seed(std::uint64_t run_seed, std::size_t client_id) {
  return derive_seed(run_seed, 1000 + client_id);
}

std::size_t interior_factor(std::size_t t, std::size_t J) {
  if (J < 3)
    throw ConfigError("fedtt_plus needs at least 3 factors per TT weight, got " +
                      std::to_string(J));
  return (t % (J - 2)) + 1;
}

std::vector<std::size_t> trainable_factors(std::size_t t, std::size_t J, Algorithm algorithm) {
  if (algorithm == Algorithm::fedtt) {
    std::vector<std::size_t> all(J);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  return {0, interior_factor(t, J), J - 1};
}

std::size_t TrainableSelection::parameter_count(const ParamLayout& layout) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layout.entries.size(); ++i)
    if (mask[i]) n += layout.entries[i].size();
  return n;
}

void check_fedtt_plus_layout(const ParamLayout& layout) {
  for (const auto& e : layout.entries)
    if (e.role == ParamRole::adapter_factor && e.group_order < 3)
      throw ConfigError("fedtt_plus needs at least 3 factors per TT weight; '" + e.name +
                        "' belongs to a weight with " + std::to_string(e.group_order));
}

TrainableSelection select_trainable(const ParamLayout& layout, std::size_t t,
                                    Algorithm algorithm) {
  TrainableSelection sel;
  sel.round = t;
  sel.mask.assign(layout.entries.size(), true);
  if (algorithm == Algorithm::fedtt) return sel;
  for (std::size_t i = 0; i < layout.entries.size(); ++i) {
    const auto& e = layout.entries[i];
    if (e.role != ParamRole::adapter_factor) continue;
    const auto J = static_cast<std::size_t>(e.group_order);
    const auto j = static_cast<std::size_t>(e.factor);
    sel.mask[i] = j == 0 || j == J - 1 || j == interior_factor(t, J);
  }
  return sel;
}

std::vector<std::size_t> sample_clients(std::size_t N, std::size_t m, std::mt19937_64& rng) {
  if (m == 0 || m > N)
    throw ConfigError("cannot sample " + std::to_string(m) + " of " + std::to_string(N) +
                      " clients");
  std::vector<std::size_t> pool(N);
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates keeps the draw count at m.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, N - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

ParamSet aggregate(const std::vector<ParamSet>& sets) {
  if (sets.empty()) throw ConfigError("nothing to aggregate");
  ParamSet out = sets.front();
  for (std::size_t c = 1; c < sets.size(); ++c) {
    if (sets[c].size() != out.size())
      throw ShapeError("client " + std::to_string(c) + " sent " + std::to_string(sets[c].size()) +
                       " tensors, expected " + std::to_string(out.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (sets[c][i].shape() != out[i].shape())
        throw ShapeError("client " + std::to_string(c) + " tensor " + std::to_string(i) +
                         " has shape " + shape_to_string(sets[c][i].shape()) + ", expected " +
                         shape_to_string(out[i].shape()));
      auto dst = out[i].values();
      auto src = sets[c][i].values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  const double n = static_cast<double>(sets.size());
  for (auto& t : out)
    for (double& v : t.values()) v /= n;
  return out;
}

double uplink_kb(std::size_t params, double bytes_per_param) {
  return static_cast<double>(params) * bytes_per_param / 1024.0;
}

ClientState make_client(std::size_t id, std::vector<std::size_t> shard, const ParamLayout& layout,
                        const FedConfig& cfg) {
  if (shard.empty()) throw ConfigError("client " + std::to_string(id) + " has an empty shard");
  ClientState c;
  c.id = id;
  const std::uint64_t seed = client_seed(cfg.seed, id);
  c.shard = shard;
  c.sampler = BatchSampler(std::move(shard), seed);
  std::vector<std::size_t> sizes;
  for (const auto& e : layout.entries) sizes.push_back(e.size());
  c.optimizer = AdamWState(cfg.optimizer, sizes);
  c.noise_rng.seed(derive_seed(seed, 7));
  c.last_mask.assign(layout.entries.size(), false);
  return c;
}

namespace {

std::vector<double> flatten_masked(const ParamSet& grads, const std::vector<bool>& mask) {
  std::vector<double> flat;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (mask[i]) {
      auto v = grads[i].values();
      flat.insert(flat.end(), v.begin(), v.end());
    }
  return flat;
}

void unflatten_masked(const std::vector<double>& flat, const std::vector<bool>& mask,
                      ParamSet& grads) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (mask[i])
      for (double& v : grads[i].values()) v = flat[pos++];
}

}  // namespace

LocalResult local_update(const ToyModel& global_model, ClientState& client, const Corpus& data,
                         const TrainableSelection& selection, const FedConfig& cfg) {
  const auto& layout = global_model.layout();
  const auto& mask = selection.mask;
  if (mask.size() != layout.entries.size()) throw ShapeError("selection does not match model");
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && !client.last_mask[i] && cfg.reset_moments) client.optimizer.slot(i).reset();
  client.last_mask = mask;

  ToyModel model = global_model;
  ParamSet params = model.trainables();
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < cfg.local_updates; ++k) {
    const Batch batch = data.gather(client.sampler.next(cfg.batch_size));
    LossAndGrad lg;
    if (cfg.dp.enabled) {
      // Per-example gradients, clipped over the whole trainable vector.
      std::vector<std::vector<double>> per_sample;
      per_sample.reserve(batch.size());
      const std::size_t S = data.seq_len;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Batch one;
        one.tokens.assign(batch.tokens.begin() + static_cast<std::ptrdiff_t>(b * S),
                          batch.tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * S));
        one.labels = {batch.labels[b]};
        LossAndGrad g = model.loss_and_grad(one, mask);
        lg.loss += g.loss / static_cast<double>(batch.size());
        per_sample.push_back(flatten_masked(g.grads, mask));
        if (b == 0) lg.grads = std::move(g.grads);
      }
      const auto noisy = dp_batch_gradient(per_sample, cfg.dp.clip, cfg.dp.effective_sigma(),
                                           client.noise_rng);
      unflatten_masked(noisy, mask, lg.grads);
    } else {
      lg = model.loss_and_grad(batch, mask);
    }
    if (!std::isfinite(lg.loss))
      throw NumericError("non-finite loss on client " + std::to_string(client.id));
    loss_sum += lg.loss;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (mask[i]) client.optimizer.step(i, params[i].values(), lg.grads[i].values());
    model.set_trainables(params);
  }
  return {std::move(params), loss_sum / static_cast<double>(cfg.local_updates)};
}

FederatedTrainer::FederatedTrainer(ToyModel model, Corpus train,
                                   std::vector<std::vector<std::size_t>> shards, Batch eval,
                                   FedConfig cfg)
    : model_(std::move(model)),
      train_(std::move(train)),
      eval_(std::move(eval)),
      cfg_(std::move(cfg)),
      sampling_rng_(derive_seed(cfg_.seed, 3)) {
  cfg_.validate();
  if (shards.size() != cfg_.num_clients)
    throw ConfigError("got " + std::to_string(shards.size()) + " shards for " +
                      std::to_string(cfg_.num_clients) + " clients");
  if (cfg_.algorithm == Algorithm::fedtt_plus) check_fedtt_plus_layout(model_.layout());
  for (std::size_t i = 0; i < shards.size(); ++i)
    clients_.push_back(make_client(i, std::move(shards[i]), model_.layout(), cfg_));
}

RoundMetrics FederatedTrainer::run_round(std::size_t t) {
  RoundMetrics m;
  m.round = t;
  const std::size_t P = cfg_.participants();
  if (P == cfg_.num_clients) {
    m.clients.resize(P);
    std::iota(m.clients.begin(), m.clients.end(), 0);
  } else {
    m.clients = sample_clients(cfg_.num_clients, P, sampling_rng_);
  }
  const TrainableSelection sel = select_trainable(model_.layout(), t, cfg_.algorithm);

  std::vector<LocalResult> results(P);
  std::vector<std::exception_ptr> errors(P);
  auto work = [&](std::size_t slot) {
    try {
      results[slot] = local_update(model_, clients_[m.clients[slot]], train_, sel, cfg_);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };
  const std::size_t nthreads = std::min(cfg_.workers, P);
  if (nthreads <= 1) {
    for (std::size_t s = 0; s < P; ++s) work(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < nthreads; ++w)
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < P; s = next++) work(s);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t s = 0; s < P; ++s) {
    if (!errors[s]) continue;
    try {
      std::rethrow_exception(errors[s]);
    } catch (const NumericError& e) {
      throw NumericError("round " + std::to_string(t) + ": " + e.what());
    }
  }

  std::vector<ParamSet> sets;
  sets.reserve(P);
  double loss = 0.0;
  for (auto& r : results) {
    loss += r.mean_loss;
    sets.push_back(std::move(r.params));
  }
  ParamSet avg = aggregate(sets);
  ParamSet next = model_.trainables();
  for (std::size_t i = 0; i < next.size(); ++i)
    if (sel.mask[i]) next[i] = std::move(avg[i]);
  model_.set_trainables(next);

  m.train_loss = loss / static_cast<double>(P);
  if (eval_.size() > 0) {
    const auto ev = model_.evaluate(eval_);
    m.eval_loss = ev.loss;
    m.eval_acc = ev.accuracy;
    if (!std::isfinite(ev.loss))
      throw NumericError("round " + std::to_string(t) + ": non-finite evaluation loss");
  }
  m.uplink_params = sel.parameter_count(model_.layout());
  m.uplink_kb = uplink_kb(m.uplink_params, cfg_.bytes_per_param);
  cumulative_kb_ += static_cast<double>(P) * m.uplink_kb;
  m.cumulative_kb = cumulative_kb_;
  return m;
}

std::vector<RoundMetrics> FederatedTrainer::run(
    const std::function<void(const RoundMetrics&)>& on_round) {
  std::vector<RoundMetrics> out;
  for (std::size_t t = 1; t <= cfg_.rounds; ++t) {
    out.push_back(run_round(t));
    if (on_round) on_round(out.back());
  }
  return out;
}

}  // namespace fedtt
