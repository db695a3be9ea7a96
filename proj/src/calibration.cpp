#include "cigl/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "cigl/error.hpp"

namespace cigl {
namespace {

void check_probs(const DoubleMatrix& probs, std::span<const std::int32_t> labels) {
  if (probs.rows == 0 || probs.cols == 0) throw Error("calibration metrics need at least one sample");
  if (labels.size() != probs.rows) {
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(probs.rows) + " rows");
  }
  for (std::size_t n = 0; n < probs.rows; ++n) {
    double sum = 0.0;
    for (double v : probs.row(n)) {
      if (!(v >= 0.0)) throw Error("probability row " + std::to_string(n) + " has a negative or NaN entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw Error("probability row " + std::to_string(n) + " sums to " + std::to_string(sum));
    }
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= probs.cols) {
      throw Error("label " + std::to_string(labels[n]) + " out of range at row " + std::to_string(n));
    }
  }
}

template <typename T>
std::size_t argmax_impl(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace

std::size_t argmax(std::span<const double> row) { return argmax_impl(row); }
std::size_t argmax(std::span<const float> row) { return argmax_impl(row); }

std::size_t confidence_bin(double confidence, std::size_t n_bins) {
  if (n_bins == 0) throw Error("n_bins must be positive");
  const double nb = static_cast<double>(n_bins);
  const double c = std::clamp(confidence, 0.0, 1.0);
  auto bin = static_cast<std::size_t>(std::max(0.0, std::ceil(c * nb) - 1.0));
  bin = std::min(bin, n_bins - 1);
  // Align with the exact edge comparison lower < c <= upper, edges m / n_bins.
  while (bin > 0 && c <= static_cast<double>(bin) / nb) --bin;
  while (bin + 1 < n_bins && c > static_cast<double>(bin + 1) / nb) ++bin;
  return bin;
}

double ReliabilityBins::ece() const {
  double total = 0.0;
  const auto n = static_cast<double>(n_samples);
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += (static_cast<double>(b.count) / n) * std::abs(*b.mean_accuracy - *b.mean_confidence);
  }
  return total;
}

ReliabilityBins reliability_bins(const DoubleMatrix& probs, std::span<const std::int32_t> labels,
                                 std::size_t n_bins) {
  check_probs(probs, labels);
  if (n_bins == 0) throw Error("n_bins must be positive");
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> correct(n_bins, 0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t n = 0; n < probs.rows; ++n) {
    const auto row = probs.row(n);
    const std::size_t pred = argmax(row);
    const double conf = std::clamp(row[pred], 0.0, 1.0);
    const std::size_t b = confidence_bin(conf, n_bins);
    conf_sum[b] += conf;
    count[b] += 1;
    if (pred == static_cast<std::size_t>(labels[n])) correct[b] += 1;
  }
  ReliabilityBins out;
  out.n_samples = probs.rows;
  const double nb = static_cast<double>(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    ReliabilityBin bin;
    bin.lower = static_cast<double>(b) / nb;
    bin.upper = static_cast<double>(b + 1) / nb;
    bin.count = count[b];
    if (count[b] > 0) {
      bin.mean_confidence = conf_sum[b] / static_cast<double>(count[b]);
      bin.mean_accuracy = static_cast<double>(correct[b]) / static_cast<double>(count[b]);
    }
    out.bins.push_back(bin);
  }
  return out;
}

double ece(const DoubleMatrix& probs, std::span<const std::int32_t> labels, std::size_t n_bins) {
  return reliability_bins(probs, labels, n_bins).ece();
}

double nll(const DoubleMatrix& probs, std::span<const std::int32_t> labels) {
  check_probs(probs, labels);
  double total = 0.0;
  for (std::size_t n = 0; n < probs.rows; ++n) {
    total -= std::log(std::max(probs.at(n, static_cast<std::size_t>(labels[n])), 1e-12));
  }
  return total / static_cast<double>(probs.rows);
}

double accuracy(const DoubleMatrix& probs, std::span<const std::int32_t> labels) {
  check_probs(probs, labels);
  std::size_t hits = 0;
  for (std::size_t n = 0; n < probs.rows; ++n) {
    if (argmax(probs.row(n)) == static_cast<std::size_t>(labels[n])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows);
}

CalibrationReport calibration_report(const DoubleMatrix& probs, std::span<const std::int32_t> labels,
                                     std::size_t n_bins) {
  CalibrationReport r;
  r.bins = reliability_bins(probs, labels, n_bins);
  r.ece = r.bins.ece();
  r.nll = nll(probs, labels);
  r.accuracy = accuracy(probs, labels);
  return r;
}

double nll_at_temperature(const DoubleMatrix& logits, std::span<const std::int32_t> labels, double temperature) {
  if (logits.rows == 0 || labels.size() != logits.rows) throw Error("temperature NLL needs matching, nonempty input");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  double total = 0.0;
  for (std::size_t n = 0; n < logits.rows; ++n) {
    const auto z = logits.row(n);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double v : z) denom += std::exp((v - zmax) / temperature);
    const double log_p = (z[static_cast<std::size_t>(labels[n])] - zmax) / temperature - std::log(denom);
    total -= log_p;
  }
  return total / static_cast<double>(logits.rows);
}

double fit_temperature(const DoubleMatrix& logits, std::span<const std::int32_t> labels) {
  if (logits.rows == 0) throw Error("fit_temperature: validation set is empty");
  bool degenerate = true;
  for (std::size_t n = 0; n < logits.rows && degenerate; ++n) {
    const auto z = logits.row(n);
    degenerate = std::all_of(z.begin(), z.end(), [&](double v) { return v == z[0]; });
  }
  if (degenerate) {
    spdlog::warn("fit_temperature: every logit row is constant; using T = 1");
    return 1.0;
  }

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = kMinTemperature;
  double hi = kMaxTemperature;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = nll_at_temperature(logits, labels, x1);
  double f2 = nll_at_temperature(logits, labels, x2);
  while (hi - lo >= 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = nll_at_temperature(logits, labels, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = nll_at_temperature(logits, labels, x2);
    }
  }
  const double t = 0.5 * (lo + hi);
  if (nll_at_temperature(logits, labels, t) > nll_at_temperature(logits, labels, 1.0)) return 1.0;
  return t;
}

Tensor label_smoothing_targets(std::span<const std::int32_t> labels, double epsilon, std::size_t num_classes) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("calib.label_smoothing", "must lie in [0, 1)");
  if (num_classes == 0) throw Error("label smoothing needs at least one class");
  const double off = epsilon / static_cast<double>(num_classes);
  Tensor t;
  t.shape = {labels.size(), num_classes};
  t.data.assign(labels.size() * num_classes, static_cast<float>(off));
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes) {
      throw Error("label " + std::to_string(labels[n]) + " out of range");
    }
    t.at(n, static_cast<std::size_t>(labels[n])) = static_cast<float>(1.0 - epsilon + off);
  }
  return t;
}

MixupBatch mixup_with_lambda(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2,
                             double lambda) {
  if (x1.shape != x2.shape || y1.shape != y2.shape) throw ShapeError("mixup: batches differ in shape");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("mixup: lambda must lie in [0, 1]");
  auto blend = [lambda](const Tensor& a, const Tensor& b) {
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] = static_cast<float>(lambda * a.data[i] + (1.0 - lambda) * b.data[i]);
    }
    return out;
  };
  return {blend(x1, x2), blend(y1, y2), lambda};
}

MixupBatch mixup_batch(const Tensor& x1, const Tensor& y1, const Tensor& x2, const Tensor& y2, double alpha,
                       Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("calib.mixup_alpha", "must be positive");
  return mixup_with_lambda(x1, y1, x2, y2, rng.beta(alpha, alpha));
}

}  // namespace cigl
