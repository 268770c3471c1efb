#include "fedtt/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "fedtt/error.hpp"

namespace fedtt {

void RunConfig::validate() const {
  model.validate();
  if (corpus.classes != model.num_classes)
    throw ConfigError("data.classes and model classes disagree");
  if (corpus.seq_len != model.seq_len) throw ConfigError("data.seq_len must equal model.seq_len");
  if (corpus.vocab != model.vocab) throw ConfigError("data.vocab must equal model.vocab");
  if (corpus.vocab < corpus.classes)
    throw ConfigError("model.vocab (" + std::to_string(corpus.vocab) +
                      ") must be >= data.classes (" + std::to_string(corpus.classes) + ")");
  if (corpus.per_class == 0) throw ConfigError("data.per_class must be >= 1");
  if (!(corpus.class_signal >= 0.0)) throw ConfigError("data.class_signal must be >= 0");
  if (!(corpus.relatedness >= 0.0 && corpus.relatedness <= 1.0))
    throw ConfigError("data.relatedness must be in [0, 1]");
  if (corpus.relatedness > 0.0 && corpus.classes > backbone.pretrain_classes)
    throw ConfigError("data.classes exceeds backbone.pretrain_classes, the task family size");
  if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("data.holdout must be in (0, 1)");
  if (backbone.pretrain_classes < 2 || backbone.pretrain_classes > model.vocab)
    throw ConfigError("backbone.pretrain_classes must be in [2, model.vocab]");
  if (backbone.pretrain_per_class == 0 || backbone.pretrain_batch == 0)
    throw ConfigError("backbone.pretrain_per_class and backbone.pretrain_batch must be >= 1");
  if (!(backbone.pretrain_lr >= 0.0)) throw ConfigError("backbone.pretrain_lr must be >= 0");
  fed.validate();
  partition.validate(corpus.classes);
  if (partition.num_clients != fed.num_clients)
    throw ConfigError("partition and fed.num_clients disagree");
  if (fed.algorithm == Algorithm::fedtt_plus && model.adapters) {
    // Adapter factor counts depend only on the hidden/bottleneck shapes.
    const std::size_t j_down = shape_plan_for(model.bottleneck, model.d_model, model.tt_rank).dims.size();
    const std::size_t j_up = shape_plan_for(model.d_model, model.bottleneck, model.tt_rank).dims.size();
    if (std::min(j_down, j_up) < 3)
      throw ConfigError("fed.algorithm = fedtt_plus needs adapter TT weights with >= 3 factors; "
                        "model.d_model/model.bottleneck give " +
                        std::to_string(std::min(j_down, j_up)));
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Rows separated by ';', entries by ','.
std::vector<std::vector<double>> parse_matrix(const std::string& key, const std::string& v) {
  std::vector<std::vector<double>> rows;
  if (v.empty()) return rows;
  std::stringstream rs(v);
  std::string row;
  while (std::getline(rs, row, ';')) {
    std::vector<double> r;
    std::stringstream es(row);
    std::string cell;
    while (std::getline(es, cell, ',')) r.push_back(parse_double(key, trim(cell)));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string emit_matrix(const std::vector<std::vector<double>>& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) out += ';';
    for (std::size_t j = 0; j < m[i].size(); ++j) {
      if (j) out += ',';
      out += fmt_double(m[i][j]);
    }
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD)                                                          \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_size(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                    \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                          \
  Key {                                                                                 \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(NAME, v); }, \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                          \
  }
#define BOOL_KEY(NAME, FIELD)                                                          \
  Key {                                                                               \
    NAME, [](RunConfig& c, const std::string& v) { c.FIELD = parse_bool(NAME, v); }, \
        [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }    \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SIZE_KEY("run.seed", fed.seed),
      Key{"run.out", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
          [](const RunConfig& c) { return c.out_dir; }},

      SIZE_KEY("model.vocab", model.vocab),
      SIZE_KEY("model.seq_len", model.seq_len),
      SIZE_KEY("model.d_model", model.d_model),
      SIZE_KEY("model.heads", model.heads),
      SIZE_KEY("model.blocks", model.blocks),
      SIZE_KEY("model.mlp_hidden", model.mlp_hidden),
      SIZE_KEY("model.bottleneck", model.bottleneck),
      SIZE_KEY("model.tt_rank", model.tt_rank),
      Key{"model.head_mode",
          [](RunConfig& c, const std::string& v) { c.model.head_mode = parse_head_mode(v); },
          [](const RunConfig& c) { return std::string(to_string(c.model.head_mode)); }},
      BOOL_KEY("model.adapter_bias", model.adapter_bias),
      Key{"model.adapter_act",
          [](RunConfig& c, const std::string& v) { c.model.adapter_act = parse_nonlinearity(v); },
          [](const RunConfig& c) { return std::string(to_string(c.model.adapter_act)); }},

      SIZE_KEY("backbone.seed", backbone.seed),
      SIZE_KEY("backbone.pretrain_classes", backbone.pretrain_classes),
      SIZE_KEY("backbone.pretrain_per_class", backbone.pretrain_per_class),
      SIZE_KEY("backbone.pretrain_steps", backbone.pretrain_steps),
      SIZE_KEY("backbone.pretrain_batch", backbone.pretrain_batch),
      DOUBLE_KEY("backbone.pretrain_lr", backbone.pretrain_lr),

      SIZE_KEY("data.seed", data_seed),
      SIZE_KEY("data.classes", corpus.classes),
      SIZE_KEY("data.per_class", corpus.per_class),
      DOUBLE_KEY("data.class_signal", corpus.class_signal),
      DOUBLE_KEY("data.relatedness", corpus.relatedness),
      DOUBLE_KEY("data.holdout", holdout),
      Key{"data.partition",
          [](RunConfig& c, const std::string& v) { c.partition.mode = parse_partition_mode(v); },
          [](const RunConfig& c) { return std::string(to_string(c.partition.mode)); }},
      Key{"data.proportions",
          [](RunConfig& c, const std::string& v) {
            c.partition.proportions = parse_matrix("data.proportions", v);
          },
          [](const RunConfig& c) { return emit_matrix(c.partition.proportions); }},

      SIZE_KEY("fed.num_clients", fed.num_clients),
      SIZE_KEY("fed.clients_per_round", fed.clients_per_round),
      SIZE_KEY("fed.local_updates", fed.local_updates),
      SIZE_KEY("fed.rounds", fed.rounds),
      Key{"fed.algorithm",
          [](RunConfig& c, const std::string& v) { c.fed.algorithm = parse_algorithm(v); },
          [](const RunConfig& c) { return std::string(to_string(c.fed.algorithm)); }},
      DOUBLE_KEY("fed.lr", fed.optimizer.lr),
      DOUBLE_KEY("fed.beta1", fed.optimizer.beta1),
      DOUBLE_KEY("fed.beta2", fed.optimizer.beta2),
      DOUBLE_KEY("fed.eps", fed.optimizer.eps),
      DOUBLE_KEY("fed.weight_decay", fed.optimizer.weight_decay),
      SIZE_KEY("fed.batch_size", fed.batch_size),
      BOOL_KEY("fed.reset_moments", fed.reset_moments),
      DOUBLE_KEY("fed.bytes_per_param", fed.bytes_per_param),

      BOOL_KEY("dp.enabled", fed.dp.enabled),
      DOUBLE_KEY("dp.clip", fed.dp.clip),
      DOUBLE_KEY("dp.sigma", fed.dp.sigma),
      BOOL_KEY("dp.derive_sigma", fed.dp.derive_sigma),
      DOUBLE_KEY("dp.epsilon", fed.dp.epsilon),
      DOUBLE_KEY("dp.delta", fed.dp.delta),
      DOUBLE_KEY("dp.sample_rate", fed.dp.sample_rate),
      SIZE_KEY("dp.steps", fed.dp.steps),
      DOUBLE_KEY("dp.c0", fed.dp.c0),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

}  // namespace

RunConfig parse_config_text(std::string_view text) {
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[k.name] = &k;

  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (auto [s, fresh] = seen.emplace(key, line_no); !fresh)
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first set on line " + std::to_string(s->second) + ")");
    it->second->set(cfg, value);
  }
  cfg.model.num_classes = cfg.corpus.classes;
  cfg.corpus.seq_len = cfg.model.seq_len;
  cfg.corpus.vocab = cfg.model.vocab;
  cfg.partition.num_clients = cfg.fed.num_clients;
  cfg.corpus.family_seed = cfg.backbone.seed;
  cfg.corpus.family_size = cfg.backbone.pretrain_classes;
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string emit_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace fedtt
