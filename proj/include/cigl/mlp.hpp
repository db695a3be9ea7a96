#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cigl/rng.hpp"
#include "cigl/tensor.hpp"

namespace cigl {

/// Binary per-weight mask, one byte per entry (0 or 1), same layout as the weight.
using Mask = std::vector<std::uint8_t>;

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t in_features() const { return weight.shape[1]; }
  std::size_t out_features() const { return weight.shape[0]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Fully connected network: ReLU on every hidden layer, identity on the output.
struct MlpModel {
  std::vector<DenseLayer> layers;

  /// He-normal weights, zero biases. `widths` = {in, hidden..., out}.
  static MlpModel create(std::span<const std::size_t> widths, Rng& rng);
  static MlpModel zeros(std::span<const std::size_t> widths);

  std::size_t input_dim() const { return layers.front().in_features(); }
  std::size_t output_dim() const { return layers.back().out_features(); }
  std::vector<std::size_t> widths() const;

  /// Throws ShapeError naming the first layer whose shapes do not chain.
  void validate() const;
  bool all_finite() const;

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

/// Logits for a batch `x` of shape [batch x in].
Tensor forward(const MlpModel& model, const Tensor& x);
/// Same computation, without rounding the logits to float32.
DoubleMatrix forward64(const MlpModel& model, const Tensor& x);

/// Row-wise softmax of logits / temperature.
DoubleMatrix softmax(const DoubleMatrix& logits, double temperature = 1.0);

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

/// Mean soft-target cross-entropy and its gradient w.r.t. the logits.
/// Every target row must sum to one within 1e-6.
LossResult softmax_cross_entropy(const Tensor& logits, const Tensor& targets);

/// One-hot target rows for integer labels.
Tensor one_hot(std::span<const std::int32_t> labels, std::size_t num_classes);

struct Gradients {
  double loss = 0.0;  // data term only
  std::vector<DenseLayer> layers;
};

/// Reverse-mode gradients of the mean cross-entropy w.r.t. every weight and bias.
Gradients backward(const MlpModel& model, const Tensor& x, const Tensor& targets);

struct SgdState {
  std::vector<Tensor> weight_velocity;
  std::vector<Tensor> bias_velocity;
  float momentum = 0.0f;
  float weight_decay = 0.0f;

  static SgdState zeros_like(const MlpModel& model, float momentum, float weight_decay);
};

/// Momentum SGD with coupled L2 decay on weights only:
///   v <- momentum * v + g + decay * w;   w <- w - lr * v
/// When `update_masks` is non-empty, the per-weight increment (g + decay * w)
/// is multiplied by the layer's mask before entering the velocity.
void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state, float lr,
              std::span<const Mask> update_masks = {});

/// Piecewise-constant learning rate: base * factor^(#milestones <= epoch).
struct LrSchedule {
  double base_lr = 0.1;
  std::vector<int> milestones;
  double decay_factor = 0.1;

  void validate() const;
  double at(int epoch) const;
};

}  // namespace cigl
