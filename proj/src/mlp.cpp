#include "cigl/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cigl/error.hpp"

namespace cigl {
namespace {

using Matrix64 = DoubleMatrix;

Matrix64 to64(const Tensor& t) {
  Matrix64 m(t.rows(), t.cols());
  std::copy(t.data.begin(), t.data.end(), m.data.begin());
  return m;
}

void check_input(const MlpModel& model, const Tensor& x) {
  model.validate();
  if (x.rank() != 2 || x.shape[1] != model.input_dim()) {
    throw ShapeError("layer 0: input of shape " + x.shape_string() + " does not match in_features " +
                     std::to_string(model.input_dim()));
  }
}

// z = a W^T + b for one layer.
Matrix64 affine(const Matrix64& a, const DenseLayer& layer) {
  const std::size_t out = layer.out_features();
  const std::size_t in = layer.in_features();
  const Matrix64 w = to64(layer.weight);
  Matrix64 z(a.rows, out);
  for (std::size_t n = 0; n < a.rows; ++n) {
    const double* an = a.row(n).data();
    double* zn = z.row(n).data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w.row(o).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += an[i] * wo[i];
      zn[o] = acc + static_cast<double>(layer.bias.data[o]);
    }
  }
  return z;
}

void relu_inplace(Matrix64& m) {
  for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

// Pre-activations of every layer; the last entry holds the logits.
std::vector<Matrix64> forward_trace(const MlpModel& model, const Tensor& x) {
  std::vector<Matrix64> pre;
  pre.reserve(model.layers.size());
  Matrix64 a = to64(x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    pre.push_back(affine(a, model.layers[l]));
    if (l + 1 < model.layers.size()) {
      a = pre.back();
      relu_inplace(a);
    }
  }
  return pre;
}

Tensor to32(const Matrix64& m) {
  Tensor t;
  t.shape = {m.rows, m.cols};
  t.data.resize(m.data.size());
  std::transform(m.data.begin(), m.data.end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
  return t;
}

struct Loss64 {
  double loss = 0.0;
  Matrix64 dlogits;
};

Loss64 cross_entropy64(const Matrix64& logits, const Tensor& targets) {
  if (targets.rank() != 2 || targets.shape[0] != logits.rows || targets.shape[1] != logits.cols) {
    throw ShapeError("targets of shape " + targets.shape_string() + " do not match logits [" +
                     std::to_string(logits.rows) + "x" + std::to_string(logits.cols) + "]");
  }
  const std::size_t batch = logits.rows;
  const std::size_t k = logits.cols;
  Loss64 out{0.0, Matrix64(batch, k)};
  std::vector<double> p(k);
  for (std::size_t n = 0; n < batch; ++n) {
    const double* z = logits.row(n).data();
    const auto t = targets.row(n);
    double tsum = 0.0;
    for (float v : t) tsum += v;
    if (std::abs(tsum - 1.0) > 1e-6) {
      throw Error("target row " + std::to_string(n) + " sums to " + std::to_string(tsum) + ", expected 1");
    }
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[c] = std::exp(z[c] - zmax);
      denom += p[c];
    }
    const double log_denom = std::log(denom);
    double* d = out.dlogits.row(n).data();
    for (std::size_t c = 0; c < k; ++c) {
      const double log_p = z[c] - zmax - log_denom;
      out.loss -= static_cast<double>(t[c]) * log_p;
      d[c] = (p[c] / denom - static_cast<double>(t[c])) / static_cast<double>(batch);
    }
  }
  out.loss /= static_cast<double>(batch);
  return out;
}

}  // namespace

MlpModel MlpModel::create(std::span<const std::size_t> widths, Rng& rng) {
  MlpModel model = zeros(widths);
  for (auto& layer : model.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(layer.in_features()));
    for (float& w : layer.weight.data) w = static_cast<float>(sd * rng.normal());
  }
  return model;
}

MlpModel MlpModel::zeros(std::span<const std::size_t> widths) {
  if (widths.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
  MlpModel model;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    model.layers.push_back({Tensor({widths[l + 1], widths[l]}), Tensor({widths[l + 1]})});
  }
  return model;
}

std::vector<std::size_t> MlpModel::widths() const {
  std::vector<std::size_t> w{input_dim()};
  for (const auto& layer : layers) w.push_back(layer.out_features());
  return w;
}

void MlpModel::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::string name = "layer " + std::to_string(l);
    if (layer.weight.rank() != 2) throw ShapeError(name + ": weight must be a matrix");
    if (layer.bias.rank() != 1 || layer.bias.shape[0] != layer.out_features()) {
      throw ShapeError(name + ": bias shape " + layer.bias.shape_string() + " does not match weight " +
                       layer.weight.shape_string());
    }
    if (l > 0 && layer.in_features() != layers[l - 1].out_features()) {
      throw ShapeError(name + ": in_features " + std::to_string(layer.in_features()) +
                       " does not chain with previous out_features " +
                       std::to_string(layers[l - 1].out_features()));
    }
  }
}

bool MlpModel::all_finite() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weight.all_finite() && l.bias.all_finite(); });
}

Tensor forward(const MlpModel& model, const Tensor& x) {
  check_input(model, x);
  auto pre = forward_trace(model, x);
  return to32(pre.back());
}

DoubleMatrix forward64(const MlpModel& model, const Tensor& x) {
  check_input(model, x);
  auto pre = forward_trace(model, x);
  return std::move(pre.back());
}

DoubleMatrix softmax(const DoubleMatrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("softmax temperature must be positive");
  DoubleMatrix p(logits.rows, logits.cols);
  for (std::size_t n = 0; n < logits.rows; ++n) {
    const auto z = logits.row(n);
    auto out = p.row(n);
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      out[c] = std::exp((z[c] - zmax) / temperature);
      denom += out[c];
    }
    for (double& v : out) v /= denom;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (!logits.all_finite()) throw NumericError("logits contain NaN or Inf");
  auto l64 = cross_entropy64(to64(logits), targets);
  return {l64.loss, to32(l64.dlogits)};
}

Tensor one_hot(std::span<const std::int32_t> labels, std::size_t num_classes) {
  Tensor t;
  t.shape = {labels.size(), num_classes};
  t.data.assign(labels.size() * num_classes, 0.0f);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= num_classes) {
      throw Error("label " + std::to_string(labels[n]) + " out of range for " + std::to_string(num_classes) +
                  " classes");
    }
    t.at(n, static_cast<std::size_t>(labels[n])) = 1.0f;
  }
  return t;
}

Gradients backward(const MlpModel& model, const Tensor& x, const Tensor& targets) {
  check_input(model, x);
  const auto pre = forward_trace(model, x);
  auto l64 = cross_entropy64(pre.back(), targets);

  const std::size_t n_layers = model.layers.size();
  const std::size_t batch = x.shape[0];
  Gradients grads;
  grads.loss = l64.loss;
  grads.layers.resize(n_layers);

  const Matrix64 input = to64(x);
  Matrix64 delta = std::move(l64.dlogits);
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = model.layers[l];
    const std::size_t out = layer.out_features();
    const std::size_t in = layer.in_features();

    Matrix64 act_storage;
    const Matrix64* act = &input;
    if (l > 0) {
      act_storage = pre[l - 1];
      relu_inplace(act_storage);
      act = &act_storage;
    }

    std::vector<double> dw(out * in, 0.0);
    std::vector<double> db(out, 0.0);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* dn = delta.row(n).data();
      const double* an = act->row(n).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dn[o];
        db[o] += d;
        if (d == 0.0) continue;
        double* dwo = dw.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dwo[i] += d * an[i];
      }
    }
    DenseLayer g{Tensor({out, in}), Tensor({out})};
    std::transform(dw.begin(), dw.end(), g.weight.data.begin(), [](double v) { return static_cast<float>(v); });
    std::transform(db.begin(), db.end(), g.bias.data.begin(), [](double v) { return static_cast<float>(v); });
    grads.layers[l] = std::move(g);

    if (l == 0) break;
    const Matrix64 w = to64(layer.weight);
    Matrix64 prev(batch, in);
    for (std::size_t n = 0; n < batch; ++n) {
      const double* dn = delta.row(n).data();
      double* pn = prev.row(n).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dn[o];
        if (d == 0.0) continue;
        const double* wo = w.row(o).data();
        for (std::size_t i = 0; i < in; ++i) pn[i] += d * wo[i];
      }
      const double* zn = pre[l - 1].row(n).data();
      for (std::size_t i = 0; i < in; ++i) {
        if (zn[i] <= 0.0) pn[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

SgdState SgdState::zeros_like(const MlpModel& model, float momentum, float weight_decay) {
  SgdState s;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (const auto& layer : model.layers) {
    s.weight_velocity.emplace_back(layer.weight.shape);
    s.bias_velocity.emplace_back(layer.bias.shape);
  }
  return s;
}

void sgd_step(MlpModel& model, const Gradients& grads, SgdState& state, float lr,
              std::span<const Mask> update_masks) {
  const std::size_t n_layers = model.layers.size();
  if (grads.layers.size() != n_layers || state.weight_velocity.size() != n_layers ||
      state.bias_velocity.size() != n_layers || (!update_masks.empty() && update_masks.size() != n_layers)) {
    throw ShapeError("sgd_step: parameter, gradient, velocity and mask counts differ");
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto& w = model.layers[l].weight.data;
    auto& b = model.layers[l].bias.data;
    const auto& gw = grads.layers[l].weight.data;
    const auto& gb = grads.layers[l].bias.data;
    auto& vw = state.weight_velocity[l].data;
    auto& vb = state.bias_velocity[l].data;
    if (gw.size() != w.size() || vw.size() != w.size() || gb.size() != b.size() || vb.size() != b.size()) {
      throw ShapeError("sgd_step: shape mismatch at layer " + std::to_string(l));
    }
    const Mask* mask = update_masks.empty() ? nullptr : &update_masks[l];
    if (mask && mask->size() != w.size()) throw ShapeError("sgd_step: mask size mismatch at layer " + std::to_string(l));
    for (std::size_t i = 0; i < w.size(); ++i) {
      float step = gw[i] + state.weight_decay * w[i];
      if (mask && !(*mask)[i]) step = 0.0f;
      vw[i] = state.momentum * vw[i] + step;
      w[i] -= lr * vw[i];
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      vb[i] = state.momentum * vb[i] + gb[i];
      b[i] -= lr * vb[i];
    }
  }
}

void LrSchedule::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("train.lr_decay", "must lie in (0, 1)");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1])) {
      throw ConfigError("train.lr_milestones", "must be non-negative and strictly increasing");
    }
  }
}

double LrSchedule::at(int epoch) const {
  double lr = base_lr;
  for (int m : milestones) {
    if (m <= epoch) lr *= decay_factor;
  }
  return lr;
}

}  // namespace cigl
