#include "cigl/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cigl/calibration.hpp"
#include "cigl/error.hpp"

namespace cigl {
namespace {

constexpr std::array<std::string_view, 7> kMethodNames{"cigl",  "rigl",       "rigl_wdp",   "rigl_mcdp",
                                                       "dense", "cigl_no_rm", "cigl_no_wma"};

struct MethodTraits {
  bool random_mask = false;    // Z sampled during training
  bool forced_keep_one = false;
  bool mask_updates = true;
  bool wma = false;            // snapshots averaged into the output
  bool ensemble = false;       // snapshots kept for prediction averaging
};

MethodTraits traits_of(const TrainConfig& c) {
  switch (c.method) {
    case Method::cigl:
      return {true, false, true, c.wma, false};
    case Method::cigl_no_rm:
      return {true, true, true, c.wma, false};
    case Method::cigl_no_wma:
      return {true, false, true, false, true};
    case Method::rigl:
      return {false, false, true, false, false};
    case Method::rigl_wdp:
    case Method::rigl_mcdp:
      return {true, false, true, false, false};
    case Method::dense:
      return {false, false, false, false, false};
  }
  throw Error("unknown method");
}

Tensor batch_targets(const Dataset& data, std::span<const std::size_t> idx, double smoothing) {
  std::vector<std::int32_t> labels;
  labels.reserve(idx.size());
  for (auto i : idx) labels.push_back(data.labels[i]);
  return smoothing > 0.0 ? label_smoothing_targets(labels, smoothing, data.num_classes)
                         : one_hot(labels, data.num_classes);
}

std::vector<Mask> update_masks_for(const DeterministicMask& m, const RandomMask* z) {
  std::vector<Mask> out = m.layers;
  if (z) {
    for (std::size_t l = 0; l < out.size(); ++l) {
      for (std::size_t i = 0; i < out[l].size(); ++i) out[l][i] = static_cast<std::uint8_t>(out[l][i] & z->layers[l][i]);
    }
  }
  return out;
}

std::vector<Tensor> parameters_of(const MlpModel& model) {
  std::vector<Tensor> out;
  for (const auto& layer : model.layers) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

MlpModel model_from_parameters(const std::vector<Tensor>& params) {
  MlpModel m;
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) m.layers.push_back({params[i], params[i + 1]});
  return m;
}

double mask_sparsity(const DeterministicMask& m) {
  const auto total = static_cast<double>(m.total_size());
  return total == 0.0 ? 0.0 : 1.0 - static_cast<double>(m.total_nnz()) / total;
}

}  // namespace

std::string_view to_string(Method method) { return kMethodNames.at(static_cast<std::size_t>(method)); }

Method parse_method(std::string_view text) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (kMethodNames[i] == text) return static_cast<Method>(i);
  }
  throw ConfigError("train.method", "unknown method '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("model.hidden", "layer widths must be positive");
  }
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("train.sparsity", "must lie in [0, 1)");
  if (update_interval < 1) throw ConfigError("train.update_interval", "must be at least 1");
  if (!(update_fraction >= 0.0 && update_fraction <= 1.0)) {
    throw ConfigError("train.update_fraction", "must lie in [0, 1]");
  }
  if (!(update_end >= 0.0 && update_end <= 1.0)) throw ConfigError("train.update_end", "must lie in [0, 1]");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("train.keep_prob", "must lie in [0, 1]");
  if (wma_start_epoch < 0 || wma_start_epoch >= epochs) {
    throw ConfigError("train.wma_start_epoch", "must lie in [0, train.epochs)");
  }
  if (wma_period < 1) throw ConfigError("train.wma_period", "must be at least 1");
  lr.validate();
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("train.momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0f)) throw ConfigError("train.weight_decay", "must be non-negative");
  if (mc_samples < 1) throw ConfigError("train.mc_samples", "must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("calib.label_smoothing", "must lie in [0, 1)");
  }
  if (!(mixup_alpha >= 0.0)) throw ConfigError("calib.mixup_alpha", "must be non-negative");
  if (n_bins < 1) throw ConfigError("calib.n_bins", "must be at least 1");
}

DoubleMatrix predict_logits(const MlpModel& model, const Tensor& x, std::size_t batch_size) {
  const std::size_t n = x.rows();
  DoubleMatrix out(n, model.output_dim());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    idx.resize(len);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = forward64(model, gather_rows(x, idx));
    std::copy(logits.data.begin(), logits.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * out.cols));
  }
  return out;
}

EvalResult evaluate_probs(DoubleMatrix probs, std::span<const std::int32_t> labels) {
  EvalResult r;
  r.accuracy = accuracy(probs, labels);
  r.nll = nll(probs, labels);
  r.probs = std::move(probs);
  return r;
}

EvalResult evaluate(const MlpModel& model, const Dataset& data, std::size_t batch_size) {
  if (!model.all_finite()) throw NumericError("evaluate: model weights are not finite");
  return evaluate_probs(softmax(predict_logits(model, data.features, batch_size)), data.labels);
}

DoubleMatrix predict_mc_dropout(const MlpModel& weights, const DeterministicMask& mask, double keep_prob,
                                std::size_t samples, const Tensor& x, Rng& rng) {
  if (samples < 1) throw Error("predict_mc_dropout: need at least one sample");
  DoubleMatrix sum(x.rows(), weights.output_dim());
  for (std::size_t s = 0; s < samples; ++s) {
    const RandomMask z = sample_random_mask(mask, keep_prob, rng);
    const auto probs = softmax(predict_logits(apply_masks(weights, mask, &z), x));
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += probs.data[i];
  }
  for (double& v : sum.data) v /= static_cast<double>(samples);
  return sum;
}

DoubleMatrix predict_ensemble(std::span<const MlpModel> members, const Tensor& x) {
  if (members.empty()) throw Error("predict_ensemble: no members");
  DoubleMatrix sum(x.rows(), members.front().output_dim());
  for (const auto& m : members) {
    const auto probs = softmax(predict_logits(m, x));
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += probs.data[i];
  }
  for (double& v : sum.data) v /= static_cast<double>(members.size());
  return sum;
}

DoubleMatrix predict_method(const TrainResult& result, const TrainConfig& config, const Tensor& x, Rng& rng) {
  if (result.method == Method::rigl_mcdp) {
    return predict_mc_dropout(result.model, result.mask, config.keep_prob, config.mc_samples, x, rng);
  }
  if (result.method == Method::cigl_no_wma && !result.ensemble.empty()) {
    return predict_ensemble(result.ensemble, x);
  }
  return softmax(predict_logits(result.model, x));
}

TrainResult train(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                  const TrainHooks& hooks) {
  config.validate();
  train_data.validate();
  if (train_data.size() == 0) throw ConfigError("data", "training set is empty");
  const MethodTraits traits = traits_of(config);

  std::vector<std::size_t> widths{train_data.dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(train_data.num_classes);

  Rng init_rng = Rng::derive(config.seed, "init.weights");
  MlpModel weights = MlpModel::create(widths, init_rng);
  std::vector<Shape> shapes;
  for (const auto& layer : weights.layers) shapes.push_back(layer.weight.shape);

  DeterministicMask mask;
  if (config.method == Method::dense) {
    mask = DeterministicMask::dense(shapes);
  } else {
    const auto plan = SparsityPlan::make(config.sparsity, config.sparsity_mode, shapes, config.dense_layers);
    Rng mask_rng = Rng::derive(config.seed, "init.mask");
    mask = init_mask(shapes, plan, mask_rng);
  }
  weights = apply_masks(weights, mask);

  SgdState state = SgdState::zeros_like(weights, config.momentum, config.weight_decay);
  Rng z_rng = Rng::derive(config.seed, "mask.random");
  Rng mixup_rng = Rng::derive(config.seed, "data.mixup");
  const double keep = traits.forced_keep_one ? 1.0 : config.keep_prob;

  const std::size_t batches = (train_data.size() + config.batch_size - 1) / config.batch_size;
  const long long total_iters = static_cast<long long>(batches) * config.epochs;
  const auto t_end = static_cast<long long>(std::floor(config.update_end * static_cast<double>(total_iters)));

  TrainResult result;
  result.method = config.method;
  WmaAccumulator wma;
  long long t = 0;
  std::optional<RandomMask> z;

  auto current_output = [&]() -> TrainResult {
    TrainResult out;
    out.method = config.method;
    out.mask = mask;
    out.last_iterate = weights;
    out.n_models = traits.ensemble ? result.ensemble.size() : wma.n_models();
    if (traits.wma && wma.n_models() > 0) {
      out.model = apply_masks(model_from_parameters(wma.mean_tensors()), mask);
    } else {
      out.model = weights;
    }
    out.ensemble = result.ensemble;
    return out;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto lr = static_cast<float>(config.lr.at(epoch));
    BatchIterator it(train_data, config.batch_size, config.seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (auto idx = it.next(); !idx.empty(); idx = it.next()) {
      ++t;
      Tensor xb = gather_rows(train_data.features, idx);
      Tensor yb = batch_targets(train_data, idx, config.label_smoothing);
      if (config.mixup_alpha > 0.0) {
        std::vector<std::size_t> perm(idx.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        mixup_rng.shuffle(std::span<std::size_t>(perm));
        auto mixed = mixup_batch(xb, yb, gather_rows(xb, perm), gather_rows(yb, perm), config.mixup_alpha, mixup_rng);
        xb = std::move(mixed.x);
        yb = std::move(mixed.y);
      }

      if (traits.mask_updates && t % config.update_interval == 0 && t < t_end) {
        const Gradients dense_grads = backward(weights, xb, yb);
        const double fraction = mask_update_fraction(t, config.update_fraction, t_end);
        const auto updates = update_deterministic_mask(weights, dense_grads, mask, fraction);
        for (std::size_t l = 0; l < updates.size(); ++l) {
          for (auto i : updates[l].pruned) {
            weights.layers[l].weight.data[i] = 0.0f;
            state.weight_velocity[l].data[i] = 0.0f;
          }
          for (auto i : updates[l].grown) {
            weights.layers[l].weight.data[i] = 0.0f;
            state.weight_velocity[l].data[i] = 0.0f;
          }
        }
        if (hooks.after_mask_update) hooks.after_mask_update(t, mask, weights);
      }

      if (traits.random_mask) {
        z = sample_random_mask(mask, keep, z_rng);
      } else {
        z.reset();
      }
      const RandomMask* zp = z ? &*z : nullptr;
      const MlpModel forward_weights = zp ? apply_masks(weights, mask, zp) : weights;
      if (hooks.on_step) hooks.on_step(t, forward_weights, mask);

      const Gradients grads = backward(forward_weights, xb, yb);
      if (!std::isfinite(grads.loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at iteration " << t << " (epoch " << epoch << ", lr " << lr
            << ", sparsity " << mask_sparsity(mask) << ")";
        throw NumericError(msg.str());
      }
      const auto update_masks = update_masks_for(mask, zp);
      sgd_step(weights, grads, state, lr, update_masks);
      loss_sum += grads.loss * static_cast<double>(idx.size());
      loss_count += idx.size();
    }
    if (!weights.all_finite()) throw NumericError("weights diverged in epoch " + std::to_string(epoch));

    const bool collect = epoch >= config.wma_start_epoch && (epoch + 1) % config.wma_period == 0;
    if (collect && (traits.wma || traits.ensemble)) {
      const MlpModel sample = apply_masks(weights, mask, z ? &*z : nullptr);
      if (traits.wma) {
        const auto params = parameters_of(sample);
        wma.update(params);
        if (hooks.on_wma_snapshot) hooks.on_wma_snapshot(params);
      } else {
        result.ensemble.push_back(sample);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(loss_count);
    rec.lr = config.lr.at(epoch);
    rec.sparsity = mask_sparsity(mask);
    rec.n_models = traits.ensemble ? result.ensemble.size() : wma.n_models();
    if (test_data.size() > 0) {
      const TrainResult snapshot = current_output();
      Rng eval_rng = Rng::derive(config.seed, "eval.mc_dropout", static_cast<std::uint64_t>(epoch));
      const auto probs = predict_method(snapshot, config, test_data.features, eval_rng);
      const auto eval = evaluate_probs(probs, test_data.labels);
      rec.test_accuracy = eval.accuracy;
      rec.test_nll = eval.nll;
      rec.test_ece = ece(eval.probs, test_data.labels, config.n_bins);
    }
    result.history.push_back(rec);
  }

  TrainResult out = current_output();
  out.history = std::move(result.history);
  return out;
}

TrainResult train_cigl(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                       const TrainHooks& hooks) {
  if (config.method != Method::cigl) throw ConfigError("train.method", "train_cigl expects method cigl");
  return train(config, train_data, test_data, hooks);
}

TrainResult train_rigl(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                       const TrainHooks& hooks) {
  if (config.method != Method::rigl) throw ConfigError("train.method", "train_rigl expects method rigl");
  return train(config, train_data, test_data, hooks);
}

TrainResult train_variant(const TrainConfig& config, const Dataset& train_data, const Dataset& test_data,
                          const TrainHooks& hooks) {
  if (config.method == Method::cigl || config.method == Method::rigl) {
    throw ConfigError("train.method", "train_variant covers the baselines and ablations only");
  }
  return train(config, train_data, test_data, hooks);
}

}  // namespace cigl
