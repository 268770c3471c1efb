// fedtt: train / report / inspect.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "fedtt/checkpoint.hpp"
#include "fedtt/config.hpp"
#include "fedtt/error.hpp"
#include "fedtt/report.hpp"
#include "fedtt/runner.hpp"

namespace {

enum Exit { ok = 0, config_error = 1, numeric_error = 2, io_error = 3 };

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fedtt::IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated fine-tuning simulator with tensor-train adapters"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::size_t workers = 1;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "run federated fine-tuning");
  train->add_option("--config", config_path, "config file (dotted.key = value)")->required();
  auto* seed_opt = train->add_option("--seed", seed, "override run.seed");
  auto* out_opt = train->add_option("--out", out_dir, "override run.out");
  train->add_option("--workers", workers, "concurrent client simulations")
      ->check(CLI::PositiveNumber);
  train->add_flag("--quiet", quiet, "do not echo metrics rows");

  std::string table_path;
  double bytes_per_param = 4.0;
  std::string reference;
  auto* report = app.add_subcommand("report", "communication cost table");
  report->add_option("--table", table_path, "CSV: method,params,rounds")->required();
  report->add_option("--bytes-per-param", bytes_per_param, "bytes per transmitted parameter");
  report->add_option("--reference", reference, "method the ratio is relative to (default: first)");

  std::string ckpt_path;
  auto* inspect = app.add_subcommand("inspect", "print a checkpoint header");
  inspect->add_option("path", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : config_error;
  }

  try {
    if (*train) {
      fedtt::RunConfig cfg = fedtt::parse_config_file(config_path);
      if (*seed_opt) cfg.fed.seed = seed;
      if (*out_opt) cfg.out_dir = out_dir;
      const auto files = fedtt::run_to_directory(cfg, workers, quiet ? nullptr : &std::cout);
      std::cerr << "wrote " << files.metrics.string() << ", " << files.checkpoint.string()
                << ", " << files.config.string() << "\n";
    } else if (*report) {
      const auto rows = fedtt::parse_comm_table(slurp(table_path));
      const auto out =
          fedtt::comm_report(rows, bytes_per_param, reference.empty() ? rows.front().method : reference);
      std::cout << fedtt::format_comm_report(out);
    } else if (*inspect) {
      const std::string raw = slurp(ckpt_path);
      std::cout << fedtt::describe_checkpoint(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    }
  } catch (const fedtt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const fedtt::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const fedtt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return numeric_error;
  } catch (const fedtt::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return io_error;
  }
  return ok;
}
