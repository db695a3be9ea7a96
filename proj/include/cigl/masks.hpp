#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cigl/mlp.hpp"
#include "cigl/rng.hpp"
#include "cigl/tensor.hpp"

namespace cigl {

using Shape = std::vector<std::size_t>;

enum class AllocationMode { uniform, erk };

std::string_view to_string(AllocationMode mode);
AllocationMode parse_allocation_mode(std::string_view text);

/// Global sparsity plus the per-layer split. Layers listed as dense keep s_l = 0
/// and are never masked.
struct SparsityPlan {
  double sparsity = 0.0;
  AllocationMode mode = AllocationMode::uniform;
  std::vector<double> layer_sparsity;
  std::vector<bool> maskable;

  static SparsityPlan make(double sparsity, AllocationMode mode, std::span<const Shape> weight_shapes,
                           std::span<const std::size_t> dense_layers = {});
  void validate() const;
};

/// Active-weight count for a layer: round((1 - s_l) * numel).
std::size_t target_nnz(double layer_sparsity, std::size_t numel);

/// Erdos-Renyi-Kernel allocation: layer density proportional to
/// (n_in + n_out) / (n_in * n_out), clipped at one with the excess budget
/// redistributed. Nonzero counts are apportioned by largest remainder so the
/// total equals round((1 - s) * sum numel) exactly. Shapes are [out x in].
std::vector<double> erk_allocate(std::span<const Shape> weight_shapes, double global_sparsity);

/// Persistent topology mask M, one layer per weight matrix.
struct DeterministicMask {
  std::vector<Mask> layers;
  std::vector<std::size_t> target_nnz;
  std::vector<bool> maskable;

  std::size_t nnz(std::size_t layer) const;
  std::size_t total_nnz() const;
  std::size_t total_size() const;

  static DeterministicMask dense(std::span<const Shape> weight_shapes);

  friend bool operator==(const DeterministicMask&, const DeterministicMask&) = default;
};

/// Per-iteration Bernoulli mask Z over the active set of M.
struct RandomMask {
  std::vector<Mask> layers;
};

DeterministicMask init_mask(std::span<const Shape> weight_shapes, const SparsityPlan& plan, Rng& rng);

/// Z_ij ~ Bernoulli(keep_prob) on positions where M = 1; zero elsewhere.
RandomMask sample_random_mask(const DeterministicMask& mask, double keep_prob, Rng& rng);

/// M (*) Z (*) W. `z` may be empty, meaning Z = 1.
Tensor apply_masks(const Tensor& weight, const Mask& m, const Mask& z = {});

/// Model whose weights are replaced by M (*) Z (*) W; biases untouched.
MlpModel apply_masks(const MlpModel& model, const DeterministicMask& m, const RandomMask* z = nullptr);

struct LayerMaskUpdate {
  Mask mask;
  std::vector<std::size_t> pruned;
  std::vector<std::size_t> grown;
};

/// Prune/regrow for one layer: k = floor(fraction * nnz) active positions with
/// the smallest |w| are dropped and the k previously inactive positions with
/// the largest |grad| are activated. Ties go to the lowest flat index.
LayerMaskUpdate update_layer_mask(std::span<const float> weight, std::span<const float> dense_grad,
                                  const Mask& mask, double fraction);

/// Applies update_layer_mask to every maskable layer; `mask` is updated in place.
std::vector<LayerMaskUpdate> update_deterministic_mask(const MlpModel& weights, const Gradients& dense_grads,
                                                       DeterministicMask& mask, double fraction);

/// Cosine-decayed update fraction (alpha / 2) * (1 + cos(pi * t / t_end)).
double mask_update_fraction(long long t, double alpha, long long t_end);

/// Running elementwise mean of parameter snapshots, accumulated in double.
class WmaAccumulator {
 public:
  void update(std::span<const Tensor> snapshot);

  std::size_t n_models() const noexcept { return n_models_; }
  const std::vector<std::vector<double>>& mean() const noexcept { return mean_; }
  /// The running mean rounded to float32, with the shapes of the snapshots.
  std::vector<Tensor> mean_tensors() const;

 private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> mean_;
  std::size_t n_models_ = 0;
};

}  // namespace cigl
