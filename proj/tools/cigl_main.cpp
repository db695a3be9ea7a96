// Command-line runner: run, sweep, correlate, export-reliability.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cigl/config.hpp"
#include "cigl/error.hpp"
#include "cigl/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct GlobalOptions {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
};

cigl::ExperimentConfig resolve_config(const GlobalOptions& g) {
  if (g.config_path.empty()) throw cigl::ConfigError("--config", "a config file is required");
  auto cfg = cigl::load_config(g.config_path);
  if (g.seed) cfg.train.seed = *g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse training with dual masks and weight & mask averaging"};
  app.require_subcommand(1);
  // Global flags are accepted before or after the subcommand.
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Experiment config (key = value)");
  app.add_option("--out", g.out, "Output directory, overrides output.dir");
  app.add_option("--seed", g.seed, "Master seed, overrides train.seed");
  app.add_flag("--force", g.force, "Overwrite an existing run directory");
  app.add_flag("-q,--quiet", g.quiet, "Only log warnings and errors");

  auto* run_cmd = app.add_subcommand("run", "Train one configuration");

  auto* sweep_cmd = app.add_subcommand("sweep", "Train every (sparsity, seed) pair and write sweep.csv");
  std::vector<double> sparsities;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  sweep_cmd->add_option("--sparsities", sparsities, "Comma-separated sparsities")->delimiter(',')->required();
  sweep_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',')->required();
  sweep_cmd->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  auto* corr_cmd = app.add_subcommand("correlate", "Accuracy drop of M*Z*W against M*W on the test split");
  std::string corr_ckpt;
  double keep_prob = 0.9;
  std::size_t draws = cigl::kDefaultCorrelationDraws;
  corr_cmd->add_option("--checkpoint", corr_ckpt, "Checkpoint to evaluate")->required();
  corr_cmd->add_option("--p", keep_prob, "Random-mask keep probability");
  corr_cmd->add_option("--draws", draws, "Number of random masks");

  auto* rel_cmd = app.add_subcommand("export-reliability", "Write the reliability-diagram CSV of a checkpoint");
  std::string rel_ckpt;
  std::string rel_output;
  std::size_t bins = cigl::kDefaultBins;
  rel_cmd->add_option("--checkpoint", rel_ckpt, "Checkpoint to evaluate")->required();
  rel_cmd->add_option("--bins", bins, "Number of equal-width bins")->check(CLI::PositiveNumber);
  rel_cmd->add_option("--output", rel_output, "CSV path (default: reliability.csv next to the checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("cigl"));
  spdlog::set_level(g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    const auto cfg = resolve_config(g);
    if (*run_cmd) {
      const auto outcome = cigl::run_experiment(cfg, cigl::run_directory(cfg), g.force);
      std::printf("accuracy %.6f ece %.6f nll %.6f\n", outcome.report.accuracy, outcome.report.ece,
                  outcome.report.nll);
    } else if (*sweep_cmd) {
      const auto rows = cigl::sweep(cfg, sparsities, seeds, cigl::run_directory(cfg), jobs, g.force);
      std::cout << cigl::sweep_csv(rows);
    } else if (*corr_cmd) {
      const auto ckpt = cigl::load_checkpoint(corr_ckpt);
      const auto data = cigl::prepare_data(cfg);
      auto rng = cigl::Rng::derive(cfg.train.seed, "correlate.random_mask");
      const auto r = cigl::correlate(ckpt, data.test, keep_prob, draws, rng);
      std::printf("base_accuracy %.6f\nmean_masked_accuracy %.6f\naccuracy_drop %.6f\n", r.base_accuracy,
                  r.mean_masked_accuracy, r.accuracy_drop);
    } else if (*rel_cmd) {
      const auto ckpt = cigl::load_checkpoint(rel_ckpt);
      const auto data = cigl::prepare_data(cfg);
      const fs::path out = rel_output.empty() ? fs::path(rel_ckpt).parent_path() / "reliability.csv" : fs::path(rel_output);
      const auto rb = cigl::export_reliability(ckpt, data.test, bins, out);
      std::printf("ece %.9f\nwritten %s\n", rb.ece(), out.string().c_str());
    }
  } catch (const cigl::ConfigError& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
