#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cigl/calibration.hpp"
#include "cigl/checkpoint.hpp"
#include "cigl/config.hpp"
#include "cigl/data.hpp"
#include "cigl/train.hpp"

namespace cigl {

struct PreparedData {
  Dataset train;
  Dataset validation;  // empty unless temperature scaling is on
  Dataset test;
};

/// Loads or generates the dataset, injects label noise and splits it. All
/// randomness derives from the config seed.
PreparedData prepare_data(const ExperimentConfig& config);

struct RunOutcome {
  TrainResult result;
  CalibrationReport report;  // final test-set report, after temperature scaling when enabled
  CalibrationReport uncalibrated;
  std::filesystem::path dir;
};

/// Trains per the config and writes model.ckpt, metrics.jsonl,
/// calibration.csv, report.json and config.resolved into `run_dir`.
/// Refuses to reuse an existing directory unless `force`.
RunOutcome run_experiment(const ExperimentConfig& config, const std::filesystem::path& run_dir, bool force);

/// Output directory for a config: out_dir / run_id.
std::filesystem::path run_directory(const ExperimentConfig& config);

Checkpoint make_checkpoint(const TrainResult& result, std::uint64_t seed);

std::string history_jsonl(const TrainHistory& history);
std::string report_json(const CalibrationReport& report, const CalibrationReport& uncalibrated);

struct SweepRow {
  double sparsity = 0.0;
  double test_accuracy = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  std::uint64_t seed = 0;
};

/// One run per (sparsity, seed), each in its own subdirectory of `out_dir`;
/// rows are sorted by (sparsity, seed) and written to out_dir/sweep.csv.
std::vector<SweepRow> sweep(const ExperimentConfig& config, std::span<const double> sparsities,
                            std::span<const std::uint64_t> seeds, const std::filesystem::path& out_dir,
                            std::size_t jobs = 1, bool force = false);
std::string sweep_csv(std::span<const SweepRow> rows);

inline constexpr std::size_t kDefaultCorrelationDraws = 5;

struct CorrelationReport {
  double base_accuracy = 0.0;
  double mean_masked_accuracy = 0.0;
  double accuracy_drop = 0.0;
  std::vector<double> draw_accuracies;
};

/// Accuracy of M (*) W against the mean accuracy of M (*) Z_i (*) W over
/// `draws` random masks with keep probability `keep_prob`.
CorrelationReport correlate(const MlpModel& weights, const DeterministicMask& mask, const Dataset& data,
                            double keep_prob, std::size_t draws, Rng& rng);
CorrelationReport correlate(const Checkpoint& ckpt, const Dataset& data, double keep_prob, std::size_t draws,
                            Rng& rng);

DeterministicMask mask_from_checkpoint(const Checkpoint& ckpt);

/// Columns bin_lower,bin_upper,count,mean_confidence,mean_accuracy; empty
/// bins leave the last two cells blank.
std::string reliability_csv(const ReliabilityBins& bins);
ReliabilityBins parse_reliability_csv(std::string_view text);

/// Evaluates the checkpoint's weights on `data` and writes the reliability CSV.
ReliabilityBins export_reliability(const Checkpoint& ckpt, const Dataset& data, std::size_t n_bins,
                                   const std::filesystem::path& csv_path);

}  // namespace cigl
