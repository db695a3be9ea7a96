#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cigl/rng.hpp"
#include "cigl/tensor.hpp"

namespace cigl {

struct Dataset {
  Tensor features;  // [n x d]
  std::vector<std::int32_t> labels;
  std::size_t num_classes = 0;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  /// Throws unless n matches, every label is in [0, K) and features are finite.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Header row required. Feature columns keep header order; labels are
/// remapped to 0..K-1 in order of first appearance (keyed on the cell text).
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);

/// Canonical CSV: columns f0..f{d-1},label; floats printed round-trippably.
void write_csv(const Dataset& data, const std::filesystem::path& path, const std::string& label_column = "label");

/// MNIST-style IDX pair: images magic 0x00000803 (u8, 3 dims), labels
/// magic 0x00000801 (u8, 1 dim). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Two interleaved half circles of unit radius; class 0 on the upper circle
/// centred at the origin, class 1 on the lower one centred at (1, 0.5).
Dataset synth_two_moons(std::size_t n, double noise_sd, Rng& rng);

struct NoisyLabels {
  Dataset data;
  std::vector<std::size_t> flipped;
};

/// Each label flips with probability `rate` to a uniformly chosen other class.
NoisyLabels inject_label_noise(const Dataset& data, double rate, Rng& rng);

/// Disjoint cover of shuffled indices; sizes are floor(f_i * n) with the
/// remainder added to the first part.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, Rng& rng);
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, Rng& rng);

/// Per-feature zero-mean / unit-variance transform fitted on one dataset.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Dataset& data);
  void apply(Dataset& data) const;
};

/// Visit order for an epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Mini-batches over one shuffled epoch. The final batch may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  /// Indices of the next batch, or an empty span once the epoch is exhausted.
  std::span<const std::size_t> next();
  std::size_t batches_per_epoch() const noexcept;

 private:
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace cigl
