#pragma once

// Synthetic sequence-classification corpora and federated partitioning.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "fedtt/model.hpp"

namespace fedtt {

struct Corpus {
  std::size_t classes = 0;
  std::size_t vocab = 0;
  std::size_t seq_len = 0;
  Batch data;

  std::size_t size() const { return data.size(); }
  std::span<const int> sequence(std::size_t i) const {
    return {data.tokens.data() + i * seq_len, seq_len};
  }
  // Examples at the given indices, in that order.
  Batch gather(std::span<const std::size_t> indices) const;
  Corpus subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_histogram() const;
};

struct CorpusConfig {
  std::size_t classes = 2;
  std::size_t per_class = 2000;
  std::size_t seq_len = 16;
  std::size_t vocab = 32;
  // Scale of the class-specific part of each transition table relative to
  // the part shared by all classes. Smaller is harder.
  double class_signal = 2.0;

  // Task family: a shared table plus a bank of class tables, all drawn from
  // family_seed. Class c uses relatedness * bank[member c] +
  // sqrt(1 - relatedness^2) * (its own noise table). With relatedness 0 the
  // bank is ignored.
  std::uint64_t family_seed = 0;
  std::size_t family_size = 8;
  double relatedness = 0.0;
  // Bank entry per class; drawn without replacement from the seed when empty.
  std::vector<std::size_t> members;
};

// Each class samples from its own first-order Markov chain over the vocab;
// the chains share a common component so the classes overlap. Examples are
// shuffled. Throws ConfigError when vocab < classes or classes < 2.
Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed);

// Stratified split: `fraction` of every class goes to the second corpus.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction,
                                        std::uint64_t seed);

enum class PartitionMode { iid, proportions, sorted_shards };

PartitionMode parse_partition_mode(std::string_view name);
std::string_view to_string(PartitionMode mode);

struct PartitionSpec {
  PartitionMode mode = PartitionMode::iid;
  std::size_t num_clients = 1;
  // clients x classes, used by PartitionMode::proportions.
  std::vector<std::vector<double>> proportions;

  // Throws ConfigError on malformed specs (rows not summing to 1, etc.).
  void validate(std::size_t classes) const;
};

// Disjoint index shards covering the corpus.
//  iid: shuffled, cut into near-equal shards.
//  proportions: every shard has floor(total / N) examples drawn per class by
//    its row (largest-remainder rounding); leftovers go round-robin.
//  sorted_shards: shuffled, stably sorted by label, cut into contiguous
//    near-equal shards.
// Shard sizes differ by at most one where sizes are not fixed by the spec;
// the first (total mod N) clients get the extra example.
std::vector<std::vector<std::size_t>> partition(const Corpus& corpus, const PartitionSpec& spec,
                                                std::uint64_t seed);

// Endless stream of minibatch indices over one shard: every epoch is a fresh
// seeded permutation and batches run across epoch boundaries.
class BatchSampler {
 public:
  BatchSampler() = default;
  BatchSampler(std::vector<std::size_t> indices, std::uint64_t seed);

  std::vector<std::size_t> next(std::size_t batch_size);
  std::size_t shard_size() const { return indices_.size(); }

 private:
  void reshuffle();

  std::vector<std::size_t> indices_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace fedtt
