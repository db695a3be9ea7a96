#pragma once
// Random problem instances shared by the unit tests and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cigl/calibration.hpp"
#include "cigl/mlp.hpp"
#include "cigl/rng.hpp"
#include "cigl/tensor.hpp"
#include "oracles.hpp"

namespace cigl::testing {

struct GradInstance {
  MlpModel model;
  Tensor x;
  Tensor targets;
};

inline Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(sd * rng.normal());
  return t;
}

inline Tensor random_targets(std::size_t n, std::size_t k, Rng& rng, bool soft) {
  Tensor t({n, k});
  for (std::size_t s = 0; s < n; ++s) {
    if (!soft) {
      t.at(s, rng.uniform_int(k)) = 1.0f;
      continue;
    }
    double total = 0.0;
    std::vector<double> w(k);
    for (auto& v : w) total += (v = rng.uniform() + 0.05);
    // Rows of soft targets must stay on the simplex after float rounding.
    float acc = 0.0f;
    for (std::size_t c = 0; c + 1 < k; ++c) acc += (t.at(s, c) = static_cast<float>(w[c] / total));
    t.at(s, k - 1) = 1.0f - acc;
  }
  return t;
}

/// Model of at most three layers and 16 units with a batch whose hidden
/// pre-activations stay at least `margin` away from the ReLU kink.
inline GradInstance gradient_instance(Rng& rng, double margin = 1e-2) {
  for (;;) {
    const std::size_t n_layers = 1 + rng.uniform_int(3);
    std::vector<std::size_t> widths;
    for (std::size_t i = 0; i <= n_layers; ++i) widths.push_back(2 + rng.uniform_int(15));
    GradInstance inst;
    inst.model = MlpModel::create(widths, rng);
    for (auto& layer : inst.model.layers) {
      for (auto& b : layer.bias.data) b = static_cast<float>(0.1 * rng.normal());
    }
    const std::size_t batch = 1 + rng.uniform_int(8);
    inst.x = random_normal({batch, widths.front()}, rng);
    inst.targets = random_targets(batch, widths.back(), rng, rng.bernoulli(0.5));
    double min_pre = std::numeric_limits<double>::infinity();
    oracle::RefMlp::from(inst.model).loss(inst.x, inst.targets, &min_pre);
    if (min_pre >= margin) return inst;
  }
}

/// Largest relative error between backward() and central differences.
inline double max_gradient_error(const GradInstance& inst, double h = 1e-3) {
  const Gradients g = backward(inst.model, inst.x, inst.targets);
  const auto fd = oracle::finite_differences(inst.model, inst.x, inst.targets, h);
  double worst = 0.0;
  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    for (std::size_t i = 0; i < fd.dw[l].size(); ++i) {
      worst = std::max(worst, oracle::relative_error(g.layers[l].weight.data[i], fd.dw[l][i]));
    }
    for (std::size_t i = 0; i < fd.db[l].size(); ++i) {
      worst = std::max(worst, oracle::relative_error(g.layers[l].bias.data[i], fd.db[l][i]));
    }
  }
  return worst;
}

struct ProbInstance {
  DoubleMatrix probs;
  std::vector<std::int32_t> labels;
};

/// Softmax rows of random logits; some instances are sharpened so that
/// confidences land near bin edges and at 1.0.
inline ProbInstance probability_instance(Rng& rng) {
  ProbInstance inst;
  const std::size_t n = 1 + rng.uniform_int(1000);
  const std::size_t k = 2 + rng.uniform_int(9);
  const double scale = std::exp(2.0 * rng.normal());
  inst.probs = DoubleMatrix(n, k);
  for (std::size_t s = 0; s < n; ++s) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) total += (inst.probs.at(s, c) = std::exp(scale * rng.normal()));
    for (std::size_t c = 0; c < k; ++c) inst.probs.at(s, c) /= total;
    inst.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(k)));
  }
  return inst;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cigl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cigl::testing
