#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cigl/error.hpp"
#include "cigl/masks.hpp"
#include "fixtures.hpp"

using namespace cigl;

namespace {

std::size_t count_ones(const Mask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)); }

DeterministicMask make_mask(const std::vector<Shape>& shapes, double s, AllocationMode mode, std::uint64_t seed) {
  Rng rng(seed);
  return init_mask(shapes, SparsityPlan::make(s, mode, shapes), rng);
}

/// ERK densities found by bisection on the scale factor, independent of the
/// iterative clipping in the library.
std::vector<double> erk_by_bisection(const std::vector<Shape>& shapes, double s) {
  double total = 0.0;
  for (const auto& sh : shapes) total += static_cast<double>(sh[0] * sh[1]);
  const double budget = (1.0 - s) * total;
  auto filled = [&](double eps, std::vector<double>* out) {
    double nnz = 0.0;
    for (const auto& sh : shapes) {
      const double numel = static_cast<double>(sh[0] * sh[1]);
      const double d = std::min(1.0, eps * static_cast<double>(sh[0] + sh[1]) / numel);
      if (out) out->push_back(d);
      nnz += d * numel;
    }
    return nnz;
  };
  double lo = 0.0, hi = 1e9;
  for (int i = 0; i < 300; ++i) {
    const double mid = 0.5 * (lo + hi);
    (filled(mid, nullptr) < budget ? lo : hi) = mid;
  }
  std::vector<double> d;
  filled(hi, &d);
  return d;
}

}  // namespace

TEST_CASE("init mask hits the exact count") {
  const std::vector<Shape> shapes{{10, 10}};
  CHECK(count_ones(make_mask(shapes, 0.95, AllocationMode::uniform, 1).layers[0]) == 5);
  CHECK(count_ones(make_mask(shapes, 0.0, AllocationMode::uniform, 1).layers[0]) == 100);
  CHECK(target_nnz(0.9, 10) == 1);
  CHECK(target_nnz(0.95, 64 * 64) == 205);
}

TEST_CASE("init mask is seeded") {
  const std::vector<Shape> shapes{{32, 32}, {32, 8}};
  CHECK(make_mask(shapes, 0.9, AllocationMode::uniform, 5) == make_mask(shapes, 0.9, AllocationMode::uniform, 5));
  CHECK(make_mask(shapes, 0.9, AllocationMode::uniform, 5).layers !=
        make_mask(shapes, 0.9, AllocationMode::uniform, 6).layers);
}

TEST_CASE("init mask refuses an empty layer") {
  const std::vector<Shape> shapes{{2, 2}};
  Rng rng(0);
  CHECK_THROWS_AS(init_mask(shapes, SparsityPlan::make(0.95, AllocationMode::uniform, shapes), rng), Error);
}

TEST_CASE("erk allocation") {
  SUBCASE("single layer keeps the global sparsity") {
    const std::vector<Shape> shapes{{30, 20}};
    CHECK(erk_allocate(shapes, 0.8)[0] == doctest::Approx(0.8));
  }
  SUBCASE("dense limit") {
    const std::vector<Shape> shapes{{10, 10}, {100, 100}};
    for (double s : erk_allocate(shapes, 0.0)) CHECK(s == 0.0);
  }
  SUBCASE("two layers meet the budget exactly") {
    const std::vector<Shape> shapes{{10, 10}, {100, 100}};
    const auto s = erk_allocate(shapes, 0.9);
    const std::size_t nnz = target_nnz(s[0], 100) + target_nnz(s[1], 10000);
    CHECK(nnz == 1010);
    CHECK(s[0] < s[1]);
    const auto ref = erk_by_bisection(shapes, 0.9);
    CHECK(std::abs(static_cast<double>(target_nnz(s[0], 100)) - ref[0] * 100) <= 1.0);
    CHECK(std::abs(static_cast<double>(target_nnz(s[1], 10000)) - ref[1] * 10000) <= 1.0);
  }
  SUBCASE("clipping at density one") {
    const std::vector<Shape> shapes{{2, 2}, {64, 64}, {2, 64}};
    const auto s = erk_allocate(shapes, 0.5);
    const auto ref = erk_by_bisection(shapes, 0.5);
    std::size_t nnz = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      const std::size_t numel = shapes[l][0] * shapes[l][1];
      nnz += target_nnz(s[l], numel);
      CHECK(std::abs(static_cast<double>(target_nnz(s[l], numel)) - ref[l] * static_cast<double>(numel)) <= 1.0);
    }
    CHECK(nnz == static_cast<std::size_t>(std::llround(0.5 * (4 + 4096 + 128))));
  }
}

TEST_CASE("random mask") {
  const std::vector<Shape> shapes{{100, 200}};
  const auto m = make_mask(shapes, 0.5, AllocationMode::uniform, 3);
  Rng rng(4);
  SUBCASE("p = 1 keeps the active set") { CHECK(sample_random_mask(m, 1.0, rng).layers[0] == m.layers[0]); }
  SUBCASE("p = 0 drops everything") { CHECK(count_ones(sample_random_mask(m, 0.0, rng).layers[0]) == 0); }
  SUBCASE("keep fraction concentrates at p") {
    const auto z = sample_random_mask(m, 0.9, rng);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < z.layers[0].size(); ++i) {
      CHECK((z.layers[0][i] == 0 || m.layers[0][i] == 1));
      kept += z.layers[0][i];
    }
    const double frac = static_cast<double>(kept) / 10000.0;
    CHECK(frac >= 0.88);
    CHECK(frac <= 0.92);
  }
}

TEST_CASE("apply masks") {
  const Tensor w({4}, std::vector<float>{1, 2, 3, 4});
  CHECK(apply_masks(w, Mask{1, 1, 1, 1}, Mask{1, 1, 1, 1}) == w);
  CHECK(apply_masks(w, Mask{0, 0, 0, 0}).data == std::vector<float>(4, 0.0f));
  const Tensor out = apply_masks(w, Mask{1, 0, 1, 1}, Mask{1, 1, 0, 1});
  CHECK(out.data == std::vector<float>{1, 0, 0, 4});
  CHECK(apply_masks(out, Mask{1, 0, 1, 1}, Mask{1, 1, 0, 1}) == out);
  CHECK_THROWS_AS(apply_masks(w, Mask{1, 0}), ShapeError);
}

TEST_CASE("prune and regrow examples") {
  const std::vector<float> w{0.1f, 0.5f, 0.3f, 0.0f, 0.0f};
  const std::vector<float> g{0.0f, 0.0f, 0.0f, 0.9f, 0.05f};
  const Mask m{1, 1, 1, 0, 0};
  SUBCASE("f = 0 is a no-op") { CHECK(update_layer_mask(w, g, m, 0.0).mask == m); }
  SUBCASE("smallest weight out, largest gradient in") {
    const auto u = update_layer_mask(w, g, m, 0.34);
    CHECK(u.mask == Mask{0, 1, 1, 1, 0});
    CHECK(u.pruned == std::vector<std::size_t>{0});
    CHECK(u.grown == std::vector<std::size_t>{3});
  }
  SUBCASE("equal gradients grow the lowest index") {
    const std::vector<float> flat{0.0f, 0.0f, 0.0f, 0.2f, 0.2f};
    CHECK(update_layer_mask(w, flat, m, 0.34).grown == std::vector<std::size_t>{3});
  }
  SUBCASE("a pruned weight is not regrown in the same step") {
    const std::vector<float> big{5.0f, 0.0f, 0.0f, 0.9f, 0.05f};
    CHECK(update_layer_mask(w, big, m, 0.34).mask == Mask{0, 1, 1, 1, 0});
  }
}

TEST_CASE("prune and regrow matches the full-sort oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(64);
    std::vector<float> w(n), g(n);
    Mask m(n);
    // Coarse quantisation forces plenty of ties in both orderings.
    const bool ties = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = ties ? static_cast<float>(rng.uniform_int(4)) * 0.25f : static_cast<float>(rng.normal());
      g[i] = ties ? static_cast<float>(rng.uniform_int(3)) - 1.0f : static_cast<float>(rng.normal());
      m[i] = rng.bernoulli(0.6) ? 1 : 0;
    }
    const double f = rng.uniform();
    const auto expected = oracle::brute_force_mask_update(w, g, m, f);
    const auto got = update_layer_mask(w, g, m, f);
    CHECK(got.mask == expected);
    CHECK(count_ones(got.mask) == count_ones(m));
  }
}

TEST_CASE("repeated updates conserve every layer's count") {
  Rng rng(12);
  const std::vector<std::size_t> widths{6, 20, 20, 3};
  MlpModel model = MlpModel::create(widths, rng);
  std::vector<Shape> shapes;
  for (const auto& l : model.layers) shapes.push_back(l.weight.shape);
  auto mask = init_mask(shapes, SparsityPlan::make(0.8, AllocationMode::erk, shapes), rng);
  const auto initial = mask.target_nnz;
  for (int step = 0; step < 50; ++step) {
    Gradients g{0.0, model.layers};
    for (auto& l : g.layers) {
      for (auto& v : l.weight.data) v = static_cast<float>(rng.normal());
    }
    for (auto& l : model.layers) {
      for (auto& v : l.weight.data) v = static_cast<float>(rng.normal());
    }
    update_deterministic_mask(model, g, mask, rng.uniform() * 0.5);
    for (std::size_t l = 0; l < shapes.size(); ++l) CHECK(mask.nnz(l) == initial[l]);
    const MlpModel masked = apply_masks(model, mask);
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      for (std::size_t i = 0; i < mask.layers[l].size(); ++i) {
        if (!mask.layers[l][i]) CHECK(masked.layers[l].weight.data[i] == 0.0f);
      }
    }
  }
}

TEST_CASE("dense layers are exempt") {
  const std::vector<Shape> shapes{{8, 4}, {2, 8}};
  const std::vector<std::size_t> dense{1};
  const auto plan = SparsityPlan::make(0.5, AllocationMode::uniform, shapes, dense);
  CHECK(plan.layer_sparsity[1] == 0.0);
  Rng rng(1);
  const auto mask = init_mask(shapes, plan, rng);
  CHECK(count_ones(mask.layers[1]) == 16);
}

TEST_CASE("cosine update fraction") {
  CHECK(mask_update_fraction(0, 0.3, 1000) == doctest::Approx(0.3));
  CHECK(mask_update_fraction(1000, 0.3, 1000) == doctest::Approx(0.0));
  CHECK(mask_update_fraction(500, 0.3, 1000) == doctest::Approx(0.15));
  CHECK_THROWS(mask_update_fraction(1001, 0.3, 1000));
}

TEST_CASE("weight averaging") {
  const Shape shape{1};
  SUBCASE("mean of one") {
    WmaAccumulator acc;
    const std::vector<Tensor> s{Tensor(shape, std::vector<float>{1.25f})};
    acc.update(s);
    CHECK(acc.n_models() == 1);
    CHECK(acc.mean()[0][0] == 1.25);
  }
  SUBCASE("two snapshots") {
    WmaAccumulator acc;
    acc.update(std::vector<Tensor>{Tensor(shape, std::vector<float>{2.0f})});
    acc.update(std::vector<Tensor>{Tensor(shape, std::vector<float>{4.0f})});
    CHECK(acc.mean()[0][0] == 3.0);
  }
  SUBCASE("constant snapshots") {
    WmaAccumulator acc;
    const std::vector<Tensor> s{Tensor(Shape{3}, std::vector<float>{0.1f, -7.0f, 3.3f})};
    for (int i = 0; i < 40; ++i) {
      acc.update(s);
      CHECK(acc.mean_tensors()[0] == s[0]);
    }
  }
  SUBCASE("running mean equals the stored mean") {
    Rng rng(8);
    for (std::size_t count = 1; count <= 50; ++count) {
      WmaAccumulator acc;
      std::vector<double> sums(16, 0.0);
      for (std::size_t k = 0; k < count; ++k) {
        Tensor t = testing::random_normal({4, 4}, rng);
        for (std::size_t i = 0; i < 16; ++i) sums[i] += t.data[i];
        acc.update(std::vector<Tensor>{t});
      }
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(acc.mean()[0][i] - sums[i] / static_cast<double>(count)) < 1e-12);
      }
    }
  }
  SUBCASE("shape changes are rejected") {
    WmaAccumulator acc;
    acc.update(std::vector<Tensor>{Tensor(Shape{2})});
    CHECK_THROWS_AS(acc.update(std::vector<Tensor>{Tensor(Shape{3})}), ShapeError);
  }
}
