#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cigl/data.hpp"
#include "cigl/masks.hpp"
#include "cigl/mlp.hpp"

namespace cigl {

enum class Method : std::uint8_t {
  cigl = 0,
  rigl = 1,
  rigl_wdp = 2,
  rigl_mcdp = 3,
  dense = 4,
  cigl_no_rm = 5,
  cigl_no_wma = 6,
};

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct TrainConfig {
  Method method = Method::cigl;
  int epochs = 100;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};

  double sparsity = 0.9;
  AllocationMode sparsity_mode = AllocationMode::uniform;
  std::vector<std::size_t> dense_layers;

  long long update_interval = 100;  // iterations between mask updates
  double update_fraction = 0.3;     // initial prune/regrow fraction
  double update_end = 0.75;         // mask frozen after this fraction of iterations
  double keep_prob = 0.9;           // Bernoulli keep probability of the random mask
  bool wma = true;
  int wma_start_epoch = 80;  // snapshots at the end of epochs e >= start (0-based)
  int wma_period = 1;

  LrSchedule lr{0.1, {50, 75}, 0.1};
  float momentum = 0.9f;
  float weight_decay = 5e-4f;

  std::size_t mc_samples = 30;
  double label_smoothing = 0.0;
  double mixup_alpha = 0.0;  // 0 disables mixup
  std::size_t n_bins = 15;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_ece = 0.0;
  double test_nll = 0.0;
  double lr = 0.0;
  double sparsity = 0.0;
  std::size_t n_models = 0;
};

using TrainHistory = std::vector<EpochRecord>;

/// Optional observers for tests and diagnostics.
struct TrainHooks {
  std::function<void(long long iteration, const DeterministicMask& mask, const MlpModel& weights)> after_mask_update;
  std::function<void(long long iteration, const MlpModel& forward_weights, const DeterministicMask& mask)> on_step;
  std::function<void(std::span<const Tensor> snapshot)> on_wma_snapshot;
};

struct TrainResult {
  Method method = Method::cigl;
  MlpModel model;          // the weights the method outputs
  MlpModel last_iterate;   // M (*) W at the final iteration
  DeterministicMask mask;  // final M
  std::size_t n_models = 0;
  std::vector<MlpModel> ensemble;  // prediction-averaging members (cigl_no_wma)
  TrainHistory history;
};

/// Trains any method. Test data may be empty, in which case test metrics are zero.
TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                  const TrainHooks& hooks = {});

/// Algorithm entry points; each checks the method tag.
TrainResult train_cigl(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                       const TrainHooks& hooks = {});
TrainResult train_rigl(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                       const TrainHooks& hooks = {});
TrainResult train_variant(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                          const TrainHooks& hooks = {});

struct EvalResult {
  double accuracy = 0.0;
  double nll = 0.0;
  DoubleMatrix probs;
};

EvalResult evaluate(const MlpModel& model, const Dataset& data, std::size_t batch_size = 256);
EvalResult evaluate_probs(DoubleMatrix probs, std::span<const std::int32_t> labels);

/// Logits in double precision, batched.
DoubleMatrix predict_logits(const MlpModel& model, const Tensor& x, std::size_t batch_size = 256);

/// Mean over `samples` draws of softmax(forward(M (*) Z_s (*) W, x)), Z_s ~ Bernoulli(p) on M.
DoubleMatrix predict_mc_dropout(const MlpModel& weights, const DeterministicMask& mask, double keep_prob,
                                std::size_t samples, const Tensor& x, Rng& rng);

/// Mean of member softmax outputs.
DoubleMatrix predict_ensemble(std::span<const MlpModel> members, const Tensor& x);

/// Class probabilities under the prediction rule of `result.method`. `rng`
/// is used only by MC dropout.
DoubleMatrix predict_method(const TrainResult& result, const TrainConfig& config, const Tensor& x, Rng& rng);

}  // namespace cigl
