#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cigl/train.hpp"

namespace cigl {

struct DataConfig {
  std::string source = "two_moons";  // two_moons | csv | idx
  std::size_t n = 2000;
  double noise_sd = 0.25;
  double label_noise = 0.0;
  std::string path;
  std::string label_column = "label";
  std::string images_path;
  std::string labels_path;
  double test_fraction = 0.2;
  bool standardize = false;
};

struct CalibConfig {
  bool temperature = false;
  double val_fraction = 0.1;
  bool mixup = false;
  double mixup_alpha = 0.2;
};

/// Everything needed to reproduce a run. Label smoothing, mixup strength and
/// the bin count live in `train` once resolved.
struct ExperimentConfig {
  TrainConfig train;
  DataConfig data;
  CalibConfig calib;
  std::string out_dir = "runs";
  std::string run_id = "run";

  /// Field-level checks, including that referenced data files exist.
  void validate() const;
};

/// Parses flat `section.key = value` text. Blank lines and `#` comments are
/// ignored; unknown keys are errors. Defaults that depend on other fields
/// (WMA start epoch, LR milestones) are materialized here.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, in a fixed order; parse_config of the
/// output reproduces the same config.
std::string serialize_config(const ExperimentConfig& config);

}  // namespace cigl
