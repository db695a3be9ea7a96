#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cigl/rng.hpp"
#include "cigl/tensor.hpp"

namespace cigl {

inline constexpr std::size_t kDefaultBins = 15;

/// Top-label prediction; ties go to the lowest class index.
std::size_t argmax(std::span<const double> row);
std::size_t argmax(std::span<const float> row);

/// Bin index for a confidence under the (lower, upper] convention with
/// bin edges m / n_bins; a confidence of exactly 0 lands in the first bin.
std::size_t confidence_bin(double confidence, std::size_t n_bins);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // absent for empty bins
  std::optional<double> mean_accuracy;
};

struct ReliabilityBins {
  std::size_t n_samples = 0;
  std::vector<ReliabilityBin> bins;

  /// sum_m (count_m / n) * |acc_m - conf_m|
  double ece() const;
};

struct CalibrationReport {
  double ece = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  ReliabilityBins bins;
  std::optional<double> temperature;
};

ReliabilityBins reliability_bins(const DoubleMatrix& probs, std::span<const std::int32_t> labels,
                                 std::size_t n_bins = kDefaultBins);
double ece(const DoubleMatrix& probs, std::span<const std::int32_t> labels, std::size_t n_bins = kDefaultBins);

/// Mean -log p(true class), probabilities clamped below at 1e-12.
double nll(const DoubleMatrix& probs, std::span<const std::int32_t> labels);
double accuracy(const DoubleMatrix& probs, std::span<const std::int32_t> labels);

CalibrationReport calibration_report(const DoubleMatrix& probs, std::span<const std::int32_t> labels,
                                     std::size_t n_bins = kDefaultBins);

/// Mean NLL of softmax(logits / T), computed directly from log-softmax.
double nll_at_temperature(const DoubleMatrix& logits, std::span<const std::int32_t> labels, double temperature);

inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 10.0;

/// Golden-section search for the temperature minimizing validation NLL on
/// [0.05, 10]. Never returns a T whose NLL exceeds NLL(1). Degenerate logits
/// (every row constant) give T = 1.
double fit_temperature(const DoubleMatrix& logits, std::span<const std::int32_t> labels);

/// True class 1 - eps + eps / K, every other class eps / K.
Tensor label_smoothing_targets(std::span<const std::int32_t> labels, double epsilon, std::size_t num_classes);

struct MixupBatch {
  Tensor x;
  Tensor y;
  double lambda = 1.0;
};

/// Convex combination with one lambda ~ Beta(alpha, alpha) for the whole batch.
MixupBatch mixup_batch(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double alpha,
                       Rng& rng);
MixupBatch mixup_with_lambda(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2,
                             double lambda);

}  // namespace cigl
