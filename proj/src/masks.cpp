#include "cigl/masks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "cigl/error.hpp"

namespace cigl {

std::string_view to_string(AllocationMode mode) { return mode == AllocationMode::erk ? "erk" : "uniform"; }

AllocationMode parse_allocation_mode(std::string_view text) {
  if (text == "uniform") return AllocationMode::uniform;
  if (text == "erk") return AllocationMode::erk;
  throw ConfigError("train.sparsity_mode", "expected 'uniform' or 'erk', got '" + std::string(text) + "'");
}

std::size_t target_nnz(double layer_sparsity, std::size_t numel) {
  return static_cast<std::size_t>(std::llround((1.0 - layer_sparsity) * static_cast<double>(numel)));
}

SparsityPlan SparsityPlan::make(double sparsity, AllocationMode mode, std::span<const Shape> weight_shapes,
                                std::span<const std::size_t> dense_layers) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("train.sparsity", "must lie in [0, 1)");
  SparsityPlan plan;
  plan.sparsity = sparsity;
  plan.mode = mode;
  plan.maskable.assign(weight_shapes.size(), true);
  for (auto l : dense_layers) {
    if (l >= weight_shapes.size()) {
      throw ConfigError("train.dense_layers", "layer index " + std::to_string(l) + " out of range");
    }
    plan.maskable[l] = false;
  }
  plan.layer_sparsity.assign(weight_shapes.size(), 0.0);
  std::vector<Shape> masked_shapes;
  for (std::size_t l = 0; l < weight_shapes.size(); ++l) {
    if (plan.maskable[l]) masked_shapes.push_back(weight_shapes[l]);
  }
  if (masked_shapes.empty()) return plan;
  std::vector<double> per_layer = mode == AllocationMode::erk ? erk_allocate(masked_shapes, sparsity)
                                                              : std::vector<double>(masked_shapes.size(), sparsity);
  for (std::size_t l = 0, j = 0; l < weight_shapes.size(); ++l) {
    if (plan.maskable[l]) plan.layer_sparsity[l] = per_layer[j++];
  }
  return plan;
}

void SparsityPlan::validate() const {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("train.sparsity", "must lie in [0, 1)");
  if (maskable.size() != layer_sparsity.size()) throw Error("sparsity plan: inconsistent layer counts");
  for (double s : layer_sparsity) {
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("train.sparsity", "per-layer sparsity outside [0, 1)");
  }
}

std::vector<double> erk_allocate(std::span<const Shape> weight_shapes, double global_sparsity) {
  if (!(global_sparsity >= 0.0 && global_sparsity < 1.0)) {
    throw ConfigError("train.sparsity", "global sparsity must lie in [0, 1)");
  }
  const std::size_t n = weight_shapes.size();
  std::vector<double> numel(n);
  std::vector<double> score(n);  // nnz per unit of epsilon: n_in + n_out
  double total = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    if (weight_shapes[l].size() != 2) throw ShapeError("erk_allocate expects matrix shapes");
    numel[l] = static_cast<double>(weight_shapes[l][0] * weight_shapes[l][1]);
    score[l] = static_cast<double>(weight_shapes[l][0] + weight_shapes[l][1]);
    total += numel[l];
  }
  const auto budget = static_cast<std::size_t>(std::llround((1.0 - global_sparsity) * total));
  if (budget == 0) throw ConfigError("train.sparsity", "infeasible: the nonzero budget rounds to zero");

  // Layers whose ERK density would exceed one are made dense, one at a time.
  std::vector<bool> dense(n, false);
  std::vector<double> target(n);
  for (;;) {
    double remaining = static_cast<double>(budget);
    double score_sum = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      if (dense[l]) {
        remaining -= numel[l];
      } else {
        score_sum += score[l];
      }
    }
    if (score_sum == 0.0) break;
    const double eps = remaining / score_sum;
    std::size_t worst = n;
    double worst_density = 1.0;
    for (std::size_t l = 0; l < n; ++l) {
      if (dense[l]) continue;
      const double density = eps * score[l] / numel[l];
      if (density > worst_density) {
        worst_density = density;
        worst = l;
      }
    }
    if (worst == n) {
      for (std::size_t l = 0; l < n; ++l) target[l] = dense[l] ? numel[l] : eps * score[l];
      break;
    }
    dense[worst] = true;
  }
  if (std::all_of(dense.begin(), dense.end(), [](bool d) { return d; })) {
    for (std::size_t l = 0; l < n; ++l) target[l] = numel[l];
  }

  // Largest-remainder apportionment of the integer budget.
  std::vector<std::size_t> nnz(n);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < n; ++l) {
    nnz[l] = std::min(static_cast<std::size_t>(std::floor(target[l])), static_cast<std::size_t>(numel[l]));
    assigned += nnz[l];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return target[a] - std::floor(target[a]) > target[b] - std::floor(target[b]);
  });
  while (assigned < budget) {
    bool progressed = false;
    for (std::size_t l : order) {
      if (assigned == budget) break;
      if (nnz[l] < static_cast<std::size_t>(numel[l])) {
        ++nnz[l];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) throw ConfigError("train.sparsity", "infeasible ERK budget");
  }

  std::vector<double> sparsity(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (nnz[l] == 0) {
      throw ConfigError("train.sparsity", "ERK allocation leaves layer " + std::to_string(l) + " without weights");
    }
    sparsity[l] = 1.0 - static_cast<double>(nnz[l]) / numel[l];
  }
  return sparsity;
}

std::size_t DeterministicMask::nnz(std::size_t layer) const {
  return static_cast<std::size_t>(std::count(layers[layer].begin(), layers[layer].end(), std::uint8_t{1}));
}

std::size_t DeterministicMask::total_nnz() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) total += nnz(l);
  return total;
}

std::size_t DeterministicMask::total_size() const {
  std::size_t total = 0;
  for (const auto& m : layers) total += m.size();
  return total;
}

DeterministicMask DeterministicMask::dense(std::span<const Shape> weight_shapes) {
  DeterministicMask mask;
  for (const auto& shape : weight_shapes) {
    const std::size_t numel = shape_numel(shape);
    mask.layers.emplace_back(numel, std::uint8_t{1});
    mask.target_nnz.push_back(numel);
    mask.maskable.push_back(false);
  }
  return mask;
}

DeterministicMask init_mask(std::span<const Shape> weight_shapes, const SparsityPlan& plan, Rng& rng) {
  plan.validate();
  if (plan.layer_sparsity.size() != weight_shapes.size()) {
    throw ShapeError("sparsity plan covers " + std::to_string(plan.layer_sparsity.size()) + " layers, model has " +
                     std::to_string(weight_shapes.size()));
  }
  DeterministicMask mask;
  for (std::size_t l = 0; l < weight_shapes.size(); ++l) {
    const std::size_t numel = shape_numel(weight_shapes[l]);
    const std::size_t keep = target_nnz(plan.layer_sparsity[l], numel);
    if (keep == 0) {
      throw ConfigError("train.sparsity", "layer " + std::to_string(l) + " would have no active weights");
    }
    Mask m(numel, 0);
    if (keep == numel) {
      std::fill(m.begin(), m.end(), std::uint8_t{1});
    } else {
      // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
      std::vector<std::size_t> idx(numel);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < keep; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_int(numel - i));
        std::swap(idx[i], idx[j]);
        m[idx[i]] = 1;
      }
    }
    mask.layers.push_back(std::move(m));
    mask.target_nnz.push_back(keep);
    mask.maskable.push_back(plan.maskable[l]);
  }
  return mask;
}

RandomMask sample_random_mask(const DeterministicMask& mask, double keep_prob, Rng& rng) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("train.keep_prob", "must lie in [0, 1]");
  RandomMask z;
  z.layers.reserve(mask.layers.size());
  for (const auto& m : mask.layers) {
    Mask layer(m.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i]) layer[i] = keep_prob >= 1.0 ? 1 : static_cast<std::uint8_t>(rng.bernoulli(keep_prob));
    }
    z.layers.push_back(std::move(layer));
  }
  return z;
}

Tensor apply_masks(const Tensor& weight, const Mask& m, const Mask& z) {
  if (m.size() != weight.numel() || (!z.empty() && z.size() != weight.numel())) {
    throw ShapeError("apply_masks: mask size does not match weight " + weight.shape_string());
  }
  Tensor out = weight;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const bool keep = m[i] && (z.empty() || z[i]);
    if (!keep) out.data[i] = 0.0f;
  }
  return out;
}

MlpModel apply_masks(const MlpModel& model, const DeterministicMask& m, const RandomMask* z) {
  if (m.layers.size() != model.layers.size() || (z && z->layers.size() != model.layers.size())) {
    throw ShapeError("apply_masks: mask layer count does not match the model");
  }
  MlpModel out = model;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    static const Mask none;
    out.layers[l].weight = apply_masks(model.layers[l].weight, m.layers[l], z ? z->layers[l] : none);
  }
  return out;
}

namespace {
std::atomic<bool> clamp_warned{false};
}  // namespace

LayerMaskUpdate update_layer_mask(std::span<const float> weight, std::span<const float> dense_grad,
                                  const Mask& mask, double fraction) {
  if (weight.size() != mask.size() || dense_grad.size() != mask.size()) {
    throw ShapeError("update_layer_mask: weight, gradient and mask sizes differ");
  }
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("update fraction must lie in [0, 1]");

  std::vector<std::size_t> active;
  std::vector<std::size_t> inactive;
  for (std::size_t i = 0; i < mask.size(); ++i) (mask[i] ? active : inactive).push_back(i);

  auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(active.size())));
  if (k > inactive.size()) {
    if (!inactive.empty() && !clamp_warned.exchange(true)) {
      spdlog::warn("mask update wants {} regrowths but only {} inactive positions exist; clamping", k,
                   inactive.size());
    }
    k = inactive.size();
  }

  LayerMaskUpdate out{mask, {}, {}};
  if (k == 0) return out;

  // Index vectors are ascending, so a stable order on magnitude breaks ties by index.
  std::partial_sort(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(k), active.end(),
                    [&](std::size_t a, std::size_t b) {
                      const float wa = std::abs(weight[a]);
                      const float wb = std::abs(weight[b]);
                      return wa < wb || (wa == wb && a < b);
                    });
  std::partial_sort(inactive.begin(), inactive.begin() + static_cast<std::ptrdiff_t>(k), inactive.end(),
                    [&](std::size_t a, std::size_t b) {
                      const float ga = std::abs(dense_grad[a]);
                      const float gb = std::abs(dense_grad[b]);
                      return ga > gb || (ga == gb && a < b);
                    });
  out.pruned.assign(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(k));
  out.grown.assign(inactive.begin(), inactive.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.pruned.begin(), out.pruned.end());
  std::sort(out.grown.begin(), out.grown.end());
  for (auto i : out.pruned) out.mask[i] = 0;
  for (auto i : out.grown) out.mask[i] = 1;
  return out;
}

std::vector<LayerMaskUpdate> update_deterministic_mask(const MlpModel& weights, const Gradients& dense_grads,
                                                       DeterministicMask& mask, double fraction) {
  if (weights.layers.size() != mask.layers.size() || dense_grads.layers.size() != mask.layers.size()) {
    throw ShapeError("update_deterministic_mask: layer counts differ");
  }
  std::vector<LayerMaskUpdate> updates(mask.layers.size());
  for (std::size_t l = 0; l < mask.layers.size(); ++l) {
    if (!mask.maskable[l]) {
      updates[l].mask = mask.layers[l];
      continue;
    }
    updates[l] = update_layer_mask(weights.layers[l].weight.data, dense_grads.layers[l].weight.data,
                                   mask.layers[l], fraction);
    mask.layers[l] = updates[l].mask;
  }
  return updates;
}

double mask_update_fraction(long long t, double alpha, long long t_end) {
  if (t_end <= 0 || t < 0 || t > t_end) {
    throw Error("mask_update_fraction: need 0 <= t <= t_end and t_end > 0");
  }
  const double ratio = static_cast<double>(t) / static_cast<double>(t_end);
  return 0.5 * alpha * (1.0 + std::cos(std::numbers::pi * ratio));
}

void WmaAccumulator::update(std::span<const Tensor> snapshot) {
  if (n_models_ == 0) {
    shapes_.clear();
    mean_.clear();
    for (const auto& t : snapshot) {
      shapes_.push_back(t.shape);
      mean_.emplace_back(t.data.begin(), t.data.end());
    }
    n_models_ = 1;
    return;
  }
  if (snapshot.size() != mean_.size()) throw ShapeError("WMA snapshot tensor count changed");
  const auto n = static_cast<double>(n_models_);
  for (std::size_t j = 0; j < snapshot.size(); ++j) {
    if (snapshot[j].shape != shapes_[j]) throw ShapeError("WMA snapshot shape changed at tensor " + std::to_string(j));
    auto& mean = mean_[j];
    const auto& data = snapshot[j].data;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = (mean[i] * n + static_cast<double>(data[i])) / (n + 1.0);
    }
  }
  ++n_models_;
}

std::vector<Tensor> WmaAccumulator::mean_tensors() const {
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < mean_.size(); ++j) {
    Tensor t;
    t.shape = shapes_[j];
    t.data.resize(mean_[j].size());
    std::transform(mean_[j].begin(), mean_[j].end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cigl
