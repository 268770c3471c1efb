#pragma once

// Federated fine-tuning engine: local AdamW updates on client shards,
// fixed-order server averaging, FedTT (all factors trainable) and FedTT+
// (first, one rotating interior and last factor of every TT weight).

#include <cstdint>
#include <functional>
#include <random>
#include <string_view>
#include <vector>

#include "fedtt/adamw.hpp"
#include "fedtt/data.hpp"
#include "fedtt/model.hpp"
#include "fedtt/privacy.hpp"

namespace fedtt {

enum class Algorithm { fedtt, fedtt_plus };

Algorithm parse_algorithm(std::string_view name);
std::string_view to_string(Algorithm a);

struct FedConfig {
  std::size_t num_clients = 5;
  // Clients sampled per round; 0 means all of them (cross-silo).
  std::size_t clients_per_round = 0;
  std::size_t local_updates = 1;
  std::size_t rounds = 100;
  Algorithm algorithm = Algorithm::fedtt;
  AdamWConfig optimizer{};
  std::size_t batch_size = 32;
  // Reset a factor's AdamW moments when FedTT+ unfreezes it again.
  bool reset_moments = true;
  double bytes_per_param = 4.0;
  DPConfig dp{};
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::size_t participants() const {
    return clients_per_round == 0 ? num_clients : clients_per_round;
  }
  void validate() const;
};

// Independent stream seed for one purpose/client of a run.
std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t stream);
std::uint64_t client_seed(std::uint64_t run_seed, std::size_t client_id);

// 0-based index of the interior factor FedTT+ trains in round t (t >= 1) for
// a weight with J factors: (t mod (J - 2)) + 1, i.e. the 1-based index
// (t mod (J - 2)) + 2. Throws ConfigError when J < 3.
std::size_t interior_factor(std::size_t t, std::size_t J);

// 0-based factor indices trainable in round t for one TT weight.
std::vector<std::size_t> trainable_factors(std::size_t t, std::size_t J, Algorithm algorithm);

struct TrainableSelection {
  std::size_t round = 0;
  std::vector<bool> mask;  // one flag per layout entry
  bool head_always_trainable = true;

  std::size_t parameter_count(const ParamLayout& layout) const;
};

// Adapter factors follow trainable_factors(); adapter biases and the whole
// head are trainable in every round.
TrainableSelection select_trainable(const ParamLayout& layout, std::size_t t,
                                    Algorithm algorithm);

// Throws ConfigError unless every adapter TT weight has J >= 3.
void check_fedtt_plus_layout(const ParamLayout& layout);

// m distinct ids from [0, N), ascending.
std::vector<std::size_t> sample_clients(std::size_t N, std::size_t m, std::mt19937_64& rng);

// Elementwise mean in client order. Throws ShapeError on structure mismatch.
ParamSet aggregate(const std::vector<ParamSet>& sets);

double uplink_kb(std::size_t params, double bytes_per_param);

struct ClientState {
  std::size_t id = 0;
  std::vector<std::size_t> shard;
  BatchSampler sampler;
  AdamWState optimizer;
  std::mt19937_64 noise_rng;
  std::vector<bool> last_mask;  // trainable flags from the last participation
};

ClientState make_client(std::size_t id, std::vector<std::size_t> shard, const ParamLayout& layout,
                        const FedConfig& cfg);

struct LocalResult {
  ParamSet params;
  double mean_loss = 0.0;
};

// K AdamW steps from the global parameters on the client's shard. Frozen
// entries are returned untouched.
LocalResult local_update(const ToyModel& global_model, ClientState& client, const Corpus& data,
                         const TrainableSelection& selection, const FedConfig& cfg);

struct RoundMetrics {
  std::size_t round = 0;
  std::vector<std::size_t> clients;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_acc = 0.0;
  std::size_t uplink_params = 0;
  double uplink_kb = 0.0;
  double cumulative_kb = 0.0;
};

class FederatedTrainer {
 public:
  // shards[i] indexes into train; eval is the held-out set.
  FederatedTrainer(ToyModel model, Corpus train, std::vector<std::vector<std::size_t>> shards,
                   Batch eval, FedConfig cfg);

  // Round t (1-based) from the current global state.
  RoundMetrics run_round(std::size_t t);
  std::vector<RoundMetrics> run(const std::function<void(const RoundMetrics&)>& on_round = {});

  const ToyModel& model() const { return model_; }
  ParamSet global() const { return model_.trainables(); }
  const std::vector<ClientState>& clients() const { return clients_; }
  const FedConfig& config() const { return cfg_; }

 private:
  ToyModel model_;
  Corpus train_;
  Batch eval_;
  FedConfig cfg_;
  std::vector<ClientState> clients_;
  std::mt19937_64 sampling_rng_;
  double cumulative_kb_ = 0.0;
};

}  // namespace fedtt
