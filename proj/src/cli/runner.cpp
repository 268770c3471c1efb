#include "fedtt/runner.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>

#include "fedtt/error.hpp"

namespace fedtt {

std::shared_ptr<const Backbone> shared_backbone(const RunConfig& cfg) {
  static std::mutex mu;
  static std::map<std::string, std::shared_ptr<const Backbone>> cache;

  // Only the model shape and backbone section affect the result.
  RunConfig key_cfg;
  key_cfg.model = cfg.model;
  key_cfg.model.num_classes = 2;
  key_cfg.model.bottleneck = 1;
  key_cfg.model.tt_rank = 1;
  key_cfg.backbone = cfg.backbone;
  std::string key = emit_config(key_cfg);

  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  CorpusConfig pc;
  pc.classes = cfg.backbone.pretrain_classes;
  pc.per_class = cfg.backbone.pretrain_per_class;
  pc.seq_len = cfg.model.seq_len;
  pc.vocab = cfg.model.vocab;
  pc.family_seed = cfg.backbone.seed;
  pc.family_size = pc.classes;
  pc.relatedness = 1.0;
  pc.members.resize(pc.classes);
  std::iota(pc.members.begin(), pc.members.end(), 0);
  const Corpus corpus = generate_corpus(pc, derive_seed(cfg.backbone.seed, 12));
  PretrainConfig pcfg;
  pcfg.classes = pc.classes;
  pcfg.steps = cfg.backbone.pretrain_steps;
  pcfg.batch_size = cfg.backbone.pretrain_batch;
  pcfg.optimizer.lr = cfg.backbone.pretrain_lr;
  auto result = pretrain_backbone(cfg.model, pcfg, corpus.data, derive_seed(cfg.backbone.seed, 11));
  cache.emplace(std::move(key), result.backbone);
  return result.backbone;
}

Experiment prepare_experiment(const RunConfig& cfg) {
  cfg.validate();
  const Corpus full = generate_corpus(cfg.corpus, cfg.data_seed);
  auto [train, eval] = split_holdout(full, cfg.holdout, derive_seed(cfg.data_seed, 1));
  auto shards = partition(train, cfg.partition, derive_seed(cfg.fed.seed, 2));
  std::mt19937_64 init_rng(derive_seed(cfg.fed.seed, 1));
  ToyModel model(shared_backbone(cfg), cfg.model, init_rng);
  return {std::move(train), std::move(eval), std::move(shards), std::move(model)};
}

std::vector<RoundMetrics> train_in_memory(const RunConfig& cfg, std::size_t workers,
                                          ParamSet* final_params,
                                          const std::function<void(const RoundMetrics&)>& on_round) {
  Experiment ex = prepare_experiment(cfg);
  FedConfig fc = cfg.fed;
  fc.workers = workers;
  FederatedTrainer trainer(std::move(ex.model), std::move(ex.train), std::move(ex.shards),
                           std::move(ex.eval.data), fc);
  auto rounds = trainer.run(on_round);
  if (final_params) *final_params = trainer.global();
  return rounds;
}

std::string metrics_csv_header() {
  return "round,clients,train_loss,eval_loss,eval_acc,uplink_kb,cumulative_kb\n";
}

std::string format_metrics_row(const RoundMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.6f,%.8f,%.8f\n", m.round, m.clients.size(),
                m.train_loss, m.eval_loss, m.eval_acc, m.uplink_kb, m.cumulative_kb);
  return buf;
}

std::vector<NamedTensor> named_trainables(const ParamLayout& layout, const ParamSet& values) {
  check_param_set(layout, values);
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out.push_back({layout.entries[i].name, values[i]});
  return out;
}

namespace {
void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("short write to " + p.string());
}
}  // namespace

RunFiles run_to_directory(const RunConfig& cfg, std::size_t workers, std::ostream* log) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
  RunFiles files{std::filesystem::path(cfg.out_dir) / "config.txt",
                 std::filesystem::path(cfg.out_dir) / "metrics.csv",
                 std::filesystem::path(cfg.out_dir) / "final.ftt"};
  write_text(files.config, emit_config(cfg));

  std::ofstream csv(files.metrics, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot write " + files.metrics.string());
  csv << metrics_csv_header();

  Experiment ex = prepare_experiment(cfg);
  const ParamLayout layout = ex.model.layout();
  FedConfig fc = cfg.fed;
  fc.workers = workers;
  FederatedTrainer trainer(std::move(ex.model), std::move(ex.train), std::move(ex.shards),
                           std::move(ex.eval.data), fc);
  trainer.run([&](const RoundMetrics& m) {
    const std::string row = format_metrics_row(m);
    csv << row << std::flush;
    if (!csv) throw IoError("short write to " + files.metrics.string());
    if (log) *log << row << std::flush;
  });
  save_checkpoint(files.checkpoint, named_trainables(layout, trainer.global()));
  return files;
}

}  // namespace fedtt
