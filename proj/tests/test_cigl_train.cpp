#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cigl/calibration.hpp"
#include "cigl/error.hpp"
#include "cigl/train.hpp"
#include "fixtures.hpp"

using namespace cigl;

namespace {

struct Split {
  Dataset train, test;
};

Split moons(std::size_t n = 300, std::uint64_t seed = 1) {
  Rng rng(seed);
  const Dataset d = synth_two_moons(n, 0.2, rng);
  const std::vector<double> f{0.8, 0.2};
  auto parts = split(d, f, rng);
  return {parts[0], parts[1]};
}

TrainConfig small_config(Method method) {
  TrainConfig c;
  c.method = method;
  c.epochs = 8;
  c.batch_size = 32;
  c.hidden = {12, 12};
  c.sparsity = 0.8;
  c.update_interval = 4;
  c.wma_start_epoch = 5;
  c.lr = {0.1, {4, 6}, 0.1};
  c.mc_samples = 4;
  c.seed = 11;
  return c;
}

std::size_t nnz(const Mask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)); }

}  // namespace

TEST_CASE("degeneracy lattice") {
  const auto data = moons();
  SUBCASE("cigl with p = 1 and no averaging is rigl") {
    TrainConfig c = small_config(Method::cigl);
    c.keep_prob = 1.0;
    c.wma = false;
    const auto a = train(c, data.train, data.test);
    const auto b = train(small_config(Method::rigl), data.train, data.test);
    CHECK(a.model == b.model);
    CHECK(a.mask == b.mask);
  }
  SUBCASE("cigl with p = 1 is cigl without random masks") {
    TrainConfig c = small_config(Method::cigl);
    c.keep_prob = 1.0;
    const auto a = train(c, data.train, data.test);
    const auto b = train(small_config(Method::cigl_no_rm), data.train, data.test);
    CHECK(a.model == b.model);
    CHECK(a.n_models == b.n_models);
  }
  SUBCASE("rigl at zero sparsity is dense") {
    TrainConfig r = small_config(Method::rigl);
    r.sparsity = 0.0;
    TrainConfig d = small_config(Method::dense);
    d.sparsity = 0.0;
    CHECK(train(r, data.train, data.test).model == train(d, data.train, data.test).model);
  }
  SUBCASE("weight dropout and mc dropout train identically") {
    const auto a = train(small_config(Method::rigl_wdp), data.train, data.test);
    const auto b = train(small_config(Method::rigl_mcdp), data.train, data.test);
    CHECK(a.model == b.model);
  }
}

TEST_CASE("a second run with the same seed is bit-identical") {
  const auto data = moons();
  const auto c = small_config(Method::cigl);
  const auto a = train_cigl(c, data.train, data.test);
  const auto b = train_cigl(c, data.train, data.test);
  CHECK(a.model == b.model);
  CHECK(a.mask == b.mask);
  TrainConfig other = c;
  other.seed = 12;
  CHECK(train_cigl(other, data.train, data.test).model != a.model);
}

TEST_CASE("entry points check the method") {
  const auto data = moons(100);
  CHECK_THROWS_AS(train_cigl(small_config(Method::rigl), data.train, data.test), ConfigError);
  CHECK_THROWS_AS(train_rigl(small_config(Method::cigl), data.train, data.test), ConfigError);
  CHECK_THROWS_AS(train_variant(small_config(Method::cigl), data.train, data.test), ConfigError);
}

TEST_CASE("sparsity is conserved and masked weights never reach the forward pass") {
  const auto data = moons();
  for (double s : {0.8, 0.9}) {
    TrainConfig c = small_config(Method::cigl);
    c.sparsity = s;
    c.hidden = {32, 32};
    std::vector<std::size_t> expected;
    std::size_t updates = 0;
    bool leaked = false;
    TrainHooks hooks;
    hooks.after_mask_update = [&](long long, const DeterministicMask& m, const MlpModel&) {
      ++updates;
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (nnz(m.layers[l]) != expected[l]) leaked = true;
      }
    };
    hooks.on_step = [&](long long, const MlpModel& w, const DeterministicMask& m) {
      if (expected.empty()) {
        for (const auto& layer : m.layers) expected.push_back(target_nnz(s, layer.size()));
      }
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        for (std::size_t i = 0; i < m.layers[l].size(); ++i) {
          if (!m.layers[l][i] && w.layers[l].weight.data[i] != 0.0f) leaked = true;
        }
      }
    };
    const auto r = train(c, data.train, data.test, hooks);
    CHECK(updates > 0);
    CHECK_FALSE(leaked);
    for (std::size_t l = 0; l < r.mask.layers.size(); ++l) {
      CHECK(nnz(r.mask.layers[l]) == target_nnz(s, r.mask.layers[l].size()));
      for (std::size_t i = 0; i < r.mask.layers[l].size(); ++i) {
        if (!r.mask.layers[l][i]) CHECK(r.model.layers[l].weight.data[i] == 0.0f);
      }
    }
  }
}

TEST_CASE("history and snapshot counts") {
  const auto data = moons();
  TrainConfig c = small_config(Method::cigl);
  c.epochs = 10;
  c.wma_start_epoch = 5;
  std::size_t snapshots = 0;
  TrainHooks hooks;
  hooks.on_wma_snapshot = [&](std::span<const Tensor>) { ++snapshots; };
  const auto r = train(c, data.train, data.test, hooks);
  CHECK(r.n_models == 5);
  CHECK(snapshots == 5);
  REQUIRE(r.history.size() == 10);
  for (int e = 0; e < 10; ++e) {
    CHECK(r.history[e].epoch == e);
    CHECK(r.history[e].n_models == static_cast<std::size_t>(std::max(0, e - 4)));
    CHECK(r.history[e].sparsity == doctest::Approx(0.8).epsilon(0.01));
  }
  CHECK(r.history[3].lr == doctest::Approx(0.1));
  CHECK(r.history[4].lr == doctest::Approx(0.01));

  TrainConfig p = c;
  p.wma_period = 2;
  CHECK(train(p, data.train, data.test).n_models == 3);
}

TEST_CASE("prediction averaging keeps one member per snapshot") {
  const auto data = moons();
  const auto r = train(small_config(Method::cigl_no_wma), data.train, data.test);
  CHECK(r.n_models == 3);
  CHECK(r.ensemble.size() == 3);
}

TEST_CASE("dense keeps an all-ones mask") {
  const auto data = moons(100);
  TrainConfig c = small_config(Method::dense);
  c.sparsity = 0.0;
  bool all_ones = true;
  TrainHooks hooks;
  hooks.on_step = [&](long long, const MlpModel&, const DeterministicMask& m) {
    for (const auto& layer : m.layers) all_ones = all_ones && nnz(layer) == layer.size();
  };
  hooks.after_mask_update = [&](long long, const DeterministicMask&, const MlpModel&) { all_ones = false; };
  train(c, data.train, data.test, hooks);
  CHECK(all_ones);
}

TEST_CASE("rigl halves the loss quickly on separable data") {
  Rng rng(3);
  Dataset d;
  d.num_classes = 2;
  d.features = Tensor({200, 2});
  for (std::size_t i = 0; i < 200; ++i) {
    d.labels.push_back(static_cast<std::int32_t>(i % 2));
    d.features.at(i, 0) = static_cast<float>((i % 2 ? 2.0 : -2.0) + 0.3 * rng.normal());
    d.features.at(i, 1) = static_cast<float>(rng.normal());
  }
  TrainConfig c = small_config(Method::rigl);
  c.epochs = 32;  // 200 steps at batch size 32 over 200 samples
  c.lr = {0.05, {}, 0.1};
  c.update_interval = 20;
  c.hidden = {32};
  c.sparsity = 0.5;
  const auto r = train(c, d, d);
  CHECK(r.history.back().train_loss <= 0.5 * r.history.front().train_loss);
  CHECK(r.history.back().test_accuracy > 0.95);
}

TEST_CASE("divergence raises a numeric error") {
  const auto data = moons(100);
  TrainConfig c = small_config(Method::rigl);
  c.lr = {1e30, {}, 0.1};
  try {
    train(c, data.train, data.test);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("config validation names the field") {
  TrainConfig c;
  c.keep_prob = 1.5;
  try {
    c.validate();
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "train.keep_prob");
  }
}

TEST_CASE("evaluate") {
  SUBCASE("uniform logits break ties toward class 0") {
    Dataset d;
    d.num_classes = 2;
    d.features = Tensor({10, 2}, 1.0f);
    d.labels = {0, 1, 1, 0, 1, 1, 1, 0, 1, 1};
    const std::vector<std::size_t> widths{2, 4, 2};
    const auto r = evaluate(MlpModel::zeros(widths), d);
    CHECK(r.accuracy == doctest::Approx(0.3));
    CHECK(r.nll == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("saturated logits") {
    Dataset d;
    d.num_classes = 2;
    d.features = Tensor::matrix(4, 2, {1, 0, 0, 1, 1, 0, 0, 1});
    d.labels = {0, 1, 0, 1};
    MlpModel m = MlpModel::zeros(std::vector<std::size_t>{2, 2});
    m.layers[0].weight.data = {15, -15, -15, 15};
    const auto r = evaluate(m, d);
    CHECK(r.accuracy == 1.0);
    CHECK(r.nll < 1e-9);
  }
  SUBCASE("rows are probabilities") {
    Rng rng(4);
    const std::vector<std::size_t> widths{2, 16, 5};
    const MlpModel m = MlpModel::create(widths, rng);
    Dataset d;
    d.num_classes = 5;
    d.features = testing::random_normal({300, 2}, rng, 3.0);
    d.labels.assign(300, 0);
    const auto r = evaluate(m, d, 64);
    for (std::size_t s = 0; s < 300; ++s) {
      double total = 0.0;
      for (double v : r.probs.row(s)) total += v;
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("mc dropout") {
  Rng rng(5);
  const std::vector<std::size_t> widths{2, 3, 2};
  MlpModel model = MlpModel::create(widths, rng);
  for (auto& b : model.layers[0].bias.data) b = 0.3f;
  std::vector<Shape> shapes{{3, 2}, {2, 3}};
  DeterministicMask mask = DeterministicMask::dense(shapes);
  mask.layers[0][4] = 0;
  mask.layers[1][1] = 0;
  const Tensor x = testing::random_normal({6, 2}, rng, 1.5);

  SUBCASE("one deterministic sample is the plain prediction") {
    Rng mc(1);
    const DoubleMatrix p = predict_mc_dropout(model, mask, 1.0, 1, x, mc);
    const DoubleMatrix plain = softmax(predict_logits(apply_masks(model, mask), x));
    for (std::size_t i = 0; i < p.data.size(); ++i) CHECK(p.data[i] == doctest::Approx(plain.data[i]).epsilon(1e-12));
  }
  SUBCASE("rows sum to one") {
    Rng mc(2);
    for (std::size_t s : {1u, 3u, 30u}) {
      const DoubleMatrix p = predict_mc_dropout(model, mask, 0.7, s, x, mc);
      for (std::size_t r = 0; r < p.rows; ++r) {
        double total = 0.0;
        for (double v : p.row(r)) total += v;
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
  SUBCASE("sampling converges to exhaustive enumeration") {
    std::vector<std::vector<double>> expected(x.rows(), std::vector<double>(2, 0.0));
    oracle::enumerate_random_masks(model, mask.layers, 0.7, [&](const MlpModel& m, double prob) {
      const auto ref = oracle::RefMlp::from(m);
      for (std::size_t s = 0; s < x.rows(); ++s) {
        const auto p = ref.probs(x.data.data() + s * 2);
        for (std::size_t c = 0; c < 2; ++c) expected[s][c] += prob * p[c];
      }
    });
    Rng mc(3);
    const DoubleMatrix got = predict_mc_dropout(model, mask, 0.7, 10000, x, mc);
    for (std::size_t s = 0; s < x.rows(); ++s) {
      for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(got.at(s, c) - expected[s][c]) < 0.01);
    }
  }
}

TEST_CASE("ensemble prediction averages member probabilities") {
  Rng rng(6);
  const std::vector<std::size_t> widths{2, 4, 3};
  const std::vector<MlpModel> members{MlpModel::create(widths, rng), MlpModel::create(widths, rng)};
  const Tensor x = testing::random_normal({5, 2}, rng);
  const DoubleMatrix p = predict_ensemble(members, x);
  const DoubleMatrix a = softmax(predict_logits(members[0], x));
  const DoubleMatrix b = softmax(predict_logits(members[1], x));
  for (std::size_t i = 0; i < p.data.size(); ++i) CHECK(p.data[i] == doctest::Approx(0.5 * (a.data[i] + b.data[i])));
}
