#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedtt/data.hpp"
#include "fedtt/error.hpp"

namespace fedtt {

PartitionMode parse_partition_mode(std::string_view name) {
  if (name == "iid") return PartitionMode::iid;
  if (name == "proportions") return PartitionMode::proportions;
  if (name == "sorted_shards") return PartitionMode::sorted_shards;
  throw ConfigError("unknown partition mode '" + std::string(name) + "'");
}

std::string_view to_string(PartitionMode mode) {
  switch (mode) {
    case PartitionMode::iid: return "iid";
    case PartitionMode::proportions: return "proportions";
    case PartitionMode::sorted_shards: return "sorted_shards";
  }
  return "?";
}

void PartitionSpec::validate(std::size_t classes) const {
  if (num_clients == 0) throw ConfigError("fed.num_clients must be >= 1");
  if (mode != PartitionMode::proportions) return;
  if (proportions.size() != num_clients)
    throw ConfigError("data.proportions has " + std::to_string(proportions.size()) +
                      " rows for " + std::to_string(num_clients) + " clients");
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    const auto& row = proportions[i];
    if (row.size() != classes)
      throw ConfigError("data.proportions row " + std::to_string(i) + " has " +
                        std::to_string(row.size()) + " entries for " + std::to_string(classes) +
                        " classes");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ConfigError("data.proportions row " + std::to_string(i) +
                                         " has a negative entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("data.proportions row " + std::to_string(i) + " sums to " +
                        std::to_string(sum));
  }
}

namespace {

std::vector<std::vector<std::size_t>> cut(const std::vector<std::size_t>& order, std::size_t n) {
  std::vector<std::vector<std::size_t>> shards(n);
  const std::size_t base = order.size() / n;
  const std::size_t extra = order.size() % n;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    shards[i].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                     order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return shards;
}

// Largest-remainder apportionment of `total` by `weights` (summing to 1).
// `rounded_up[c]` marks entries that received a remainder unit.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights,
                                   std::vector<bool>& rounded_up) {
  const std::size_t k = weights.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> rem(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = weights[c] * static_cast<double>(total);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  rounded_up.assign(k, false);
  for (std::size_t i = 0; assigned < total && i < k; ++i, ++assigned) {
    ++counts[order[i]];
    rounded_up[order[i]] = true;
  }
  return counts;
}

std::vector<std::vector<std::size_t>> by_proportions(const Corpus& corpus,
                                                     const PartitionSpec& spec,
                                                     std::mt19937_64& rng) {
  const std::size_t N = spec.num_clients;
  const std::size_t C = corpus.classes;
  std::vector<std::vector<std::size_t>> pools(C);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    pools[static_cast<std::size_t>(corpus.data.labels[i])].push_back(i);
  for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);

  const std::size_t shard = corpus.size() / N;
  std::vector<std::vector<std::size_t>> counts(N);
  std::vector<std::vector<bool>> up(N);
  for (std::size_t i = 0; i < N; ++i) counts[i] = apportion(shard, spec.proportions[i], up[i]);

  // A class short by no more than its rounding units is trimmed from the
  // last clients that were rounded up; anything beyond that is infeasible.
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t demand = 0;
    for (std::size_t i = 0; i < N; ++i) demand += counts[i][c];
    std::size_t excess = demand > pools[c].size() ? demand - pools[c].size() : 0;
    std::size_t ups = 0;
    for (std::size_t i = 0; i < N; ++i) ups += up[i][c] ? 1 : 0;
    if (excess > ups) {
      std::size_t cum = 0;
      for (std::size_t i = 0; i < N; ++i) {
        cum += counts[i][c];
        if (cum > pools[c].size())
          throw ConfigError("partition infeasible: client " + std::to_string(i) + " needs " +
                            std::to_string(counts[i][c]) + " examples of class " +
                            std::to_string(c) + " but only " +
                            std::to_string(pools[c].size() - (cum - counts[i][c])) +
                            " remain");
      }
    }
    for (std::size_t i = N; excess > 0 && i-- > 0;)
      if (up[i][c]) {
        --counts[i][c];
        --excess;
      }
  }

  std::vector<std::vector<std::size_t>> shards(N);
  std::vector<std::size_t> taken(C, 0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      auto first = pools[c].begin() + static_cast<std::ptrdiff_t>(taken[c]);
      shards[i].insert(shards[i].end(), first, first + static_cast<std::ptrdiff_t>(counts[i][c]));
      taken[c] += counts[i][c];
    }
  std::size_t next = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = taken[c]; j < pools[c].size(); ++j) {
      shards[next].push_back(pools[c][j]);
      next = (next + 1) % N;
    }
  return shards;
}

}  // namespace

std::vector<std::vector<std::size_t>> partition(const Corpus& corpus, const PartitionSpec& spec,
                                                std::uint64_t seed) {
  spec.validate(corpus.classes);
  if (corpus.size() < spec.num_clients)
    throw ConfigError("corpus of " + std::to_string(corpus.size()) + " examples cannot feed " +
                      std::to_string(spec.num_clients) + " clients");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  switch (spec.mode) {
    case PartitionMode::iid:
      std::shuffle(order.begin(), order.end(), rng);
      return cut(order, spec.num_clients);
    case PartitionMode::sorted_shards:
      std::shuffle(order.begin(), order.end(), rng);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus.data.labels[a] < corpus.data.labels[b];
      });
      return cut(order, spec.num_clients);
    case PartitionMode::proportions:
      return by_proportions(corpus, spec, rng);
  }
  return {};
}

BatchSampler::BatchSampler(std::vector<std::size_t> indices, std::uint64_t seed)
    : indices_(std::move(indices)), rng_(seed) {
  if (indices_.empty()) throw ConfigError("cannot sample batches from an empty shard");
  reshuffle();
}

void BatchSampler::reshuffle() {
  order_ = indices_;
  std::shuffle(order_.begin(), order_.end(), rng_);
  pos_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  if (indices_.empty()) throw ConfigError("batch sampler has no examples");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

}  // namespace fedtt
