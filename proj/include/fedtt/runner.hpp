#pragma once

// Experiment orchestration shared by the CLI and the acceptance suite.

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "fedtt/checkpoint.hpp"
#include "fedtt/config.hpp"
#include "fedtt/fed.hpp"

namespace fedtt {

// Pretrained backbone for the config's model and backbone sections. Results
// are memoized per process, keyed by those sections.
std::shared_ptr<const Backbone> shared_backbone(const RunConfig& cfg);

struct Experiment {
  Corpus train;
  Corpus eval;
  std::vector<std::vector<std::size_t>> shards;
  ToyModel model;  // initial global model
};

Experiment prepare_experiment(const RunConfig& cfg);

// Runs every round in memory. `workers` bounds concurrent clients.
std::vector<RoundMetrics> train_in_memory(
    const RunConfig& cfg, std::size_t workers, ParamSet* final_params = nullptr,
    const std::function<void(const RoundMetrics&)>& on_round = {});

std::string metrics_csv_header();
std::string format_metrics_row(const RoundMetrics& m);

std::vector<NamedTensor> named_trainables(const ParamLayout& layout, const ParamSet& values);

struct RunFiles {
  std::filesystem::path config;
  std::filesystem::path metrics;
  std::filesystem::path checkpoint;
};

// Writes config.txt, metrics.csv and final.ftt under cfg.out_dir.
RunFiles run_to_directory(const RunConfig& cfg, std::size_t workers, std::ostream* log = nullptr);

}  // namespace fedtt
