#pragma once

// Run configuration: flat "dotted.key = value" text, '#' starts a comment.
// Every key has a default; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fedtt/data.hpp"
#include "fedtt/fed.hpp"
#include "fedtt/model.hpp"

namespace fedtt {

struct BackboneConfig {
  std::uint64_t seed = 7;
  std::size_t pretrain_classes = 4;
  std::size_t pretrain_per_class = 500;
  std::size_t pretrain_steps = 150;
  std::size_t pretrain_batch = 32;
  double pretrain_lr = 3e-3;
};

struct RunConfig {
  ModelConfig model{};
  BackboneConfig backbone{};
  CorpusConfig corpus{};
  std::uint64_t data_seed = 1;
  double holdout = 0.2;
  PartitionSpec partition{};  // num_clients mirrors fed.num_clients
  FedConfig fed{};            // fed.dp holds the dp section, fed.seed the run seed
  std::string out_dir = "runs/default";

  void validate() const;
};

// Throws ConfigError naming the offending key or line.
RunConfig parse_config_text(std::string_view text);
// Throws IoError when the file cannot be read.
RunConfig parse_config_file(const std::filesystem::path& path);
// Every key, in a fixed order; parse_config_text(emit_config(c)) == c.
std::string emit_config(const RunConfig& cfg);

}  // namespace fedtt
