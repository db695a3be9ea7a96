#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

#include "cigl/data.hpp"
#include "cigl/error.hpp"
#include "fixtures.hpp"

using namespace cigl;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

std::string idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, const std::vector<std::uint8_t>& px,
                       std::uint32_t magic = 0x803) {
  std::string out;
  put_u32(out, magic);
  put_u32(out, n);
  put_u32(out, rows);
  put_u32(out, cols);
  out.append(px.begin(), px.end());
  return out;
}

std::string idx_labels(const std::vector<std::uint8_t>& labels, std::uint32_t magic = 0x801) {
  std::string out;
  put_u32(out, magic);
  put_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(labels.begin(), labels.end());
  return out;
}

std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("csv loading") {
  const auto dir = testing::scratch_dir("csv");
  SUBCASE("labels remap by first appearance") {
    write_text(dir / "a.csv", "x,label,z\n1,5,2\n3,7,4\n5.5,5,-1e-3\n");
    const Dataset d = load_csv(dir / "a.csv", "label");
    CHECK(d.labels == std::vector<std::int32_t>{0, 1, 0});
    CHECK(d.num_classes == 2);
    CHECK(d.features.shape == std::vector<std::size_t>{3, 2});
    CHECK(d.features.data == std::vector<float>{1, 2, 3, 4, 5.5f, -1e-3f});
  }
  SUBCASE("four feature columns") {
    write_text(dir / "b.csv", "a,b,c,d,y\n1,2,3,4,0\n5,6,7,8,1\n");
    CHECK(load_csv(dir / "b.csv", "y").features.shape == std::vector<std::size_t>{2, 4});
  }
  SUBCASE("header only") {
    write_text(dir / "c.csv", "a,label\n");
    CHECK(error_text([&] { load_csv(dir / "c.csv", "label"); }).find("empty dataset") != std::string::npos);
  }
  SUBCASE("ragged row reports its position") {
    write_text(dir / "d.csv", "a,label\n1,0\n2\n");
    CHECK(error_text([&] { load_csv(dir / "d.csv", "label"); }).find("row 3") != std::string::npos);
  }
  SUBCASE("non-numeric cell reports row and column") {
    write_text(dir / "e.csv", "a,b,label\n1,2,0\n3,oops,1\n");
    const auto msg = error_text([&] { load_csv(dir / "e.csv", "label"); });
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("column 2") != std::string::npos);
  }
  SUBCASE("missing label column") {
    write_text(dir / "f.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(load_csv(dir / "f.csv", "label"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_csv(dir / "nope.csv", "label"), Error); }
}

TEST_CASE("csv round trip") {
  const auto dir = testing::scratch_dir("csv_rt");
  Rng rng(3);
  const Dataset d = synth_two_moons(57, 0.3, rng);
  write_csv(d, dir / "moons.csv");
  const Dataset back = load_csv(dir / "moons.csv", "label");
  CHECK(back.features == d.features);
  // First-appearance remapping may permute class ids; the partition must survive.
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d.size(); ++j) CHECK(((d.labels[i] == d.labels[j]) == (back.labels[i] == back.labels[j])));
  }
  write_csv(back, dir / "again.csv");
  const Dataset twice = load_csv(dir / "again.csv", "label");
  CHECK(twice.features == back.features);
  CHECK(twice.labels == back.labels);
}

TEST_CASE("idx loading") {
  const auto dir = testing::scratch_dir("idx");
  const std::vector<std::uint8_t> px{0, 255, 51, 102, 7, 8, 9, 10};
  write_text(dir / "img", idx_images(2, 2, 2, px));
  write_text(dir / "lbl", idx_labels({3, 1}));
  const Dataset d = load_idx(dir / "img", dir / "lbl");
  CHECK(d.features.shape == std::vector<std::size_t>{2, 4});
  CHECK(d.features.at(0, 1) == 1.0f);
  CHECK(d.features.at(0, 2) == doctest::Approx(0.2));
  // Digit labels are kept as-is.
  CHECK(d.labels == std::vector<std::int32_t>{3, 1});
  CHECK(d.num_classes == 4);

  write_text(dir / "bad_magic", idx_images(2, 2, 2, px, 0x801));
  CHECK_THROWS_AS(load_idx(dir / "bad_magic", dir / "lbl"), FormatError);
  write_text(dir / "three", idx_labels({1, 2, 3}));
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "three"), FormatError);
  write_text(dir / "short", idx_images(2, 2, 2, {1, 2, 3}));
  CHECK_THROWS_AS(load_idx(dir / "short", dir / "lbl"), FormatError);
}

TEST_CASE("two moons") {
  Rng rng(1);
  SUBCASE("noise-free class 0 lies on the upper unit half circle") {
    const Dataset d = synth_two_moons(200, 0.0, rng);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.labels[i] != 0) continue;
      const double x = d.features.at(i, 0), y = d.features.at(i, 1);
      CHECK(std::abs(std::hypot(x, y) - 1.0) < 1e-6);
      CHECK(y >= -1e-7);
    }
  }
  SUBCASE("balanced classes") {
    for (std::size_t n : {100u, 101u}) {
      const Dataset d = synth_two_moons(n, 0.2, rng);
      const auto zeros = static_cast<std::size_t>(std::count(d.labels.begin(), d.labels.end(), 0));
      CHECK(zeros == (n + 1) / 2);
      CHECK(d.size() - zeros == n / 2);
    }
  }
  SUBCASE("seeded") {
    Rng a(9), b(9), c(10);
    const Dataset x = synth_two_moons(300, 0.25, a);
    const Dataset y = synth_two_moons(300, 0.25, b);
    CHECK(x.features == y.features);
    CHECK(x.labels == y.labels);
    CHECK(x.features != synth_two_moons(300, 0.25, c).features);
  }
}

TEST_CASE("label noise") {
  Rng rng(2);
  const Dataset d = synth_two_moons(10000, 0.1, rng);
  CHECK(inject_label_noise(d, 0.0, rng).data.labels == d.labels);
  const auto all = inject_label_noise(d, 1.0, rng);
  CHECK(all.flipped.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(all.data.labels[i] != d.labels[i]);
  const auto some = inject_label_noise(d, 0.2, rng);
  const double frac = static_cast<double>(some.flipped.size()) / 10000.0;
  CHECK(frac >= 0.17);
  CHECK(frac <= 0.23);
  for (std::size_t i : some.flipped) CHECK(some.data.labels[i] != d.labels[i]);

  Dataset three = d;
  for (std::size_t i = 0; i < three.size(); ++i) three.labels[i] = static_cast<std::int32_t>(i % 3);
  three.num_classes = 3;
  const auto flipped3 = inject_label_noise(three, 1.0, rng);
  std::size_t to_plus_one = 0;
  for (std::size_t i = 0; i < three.size(); ++i) {
    CHECK(flipped3.data.labels[i] != three.labels[i]);
    to_plus_one += flipped3.data.labels[i] == (three.labels[i] + 1) % 3;
  }
  CHECK(static_cast<double>(to_plus_one) / 10000.0 == doctest::Approx(0.5).epsilon(0.06));
}

TEST_CASE("splits") {
  Rng rng(4);
  const std::vector<double> three{0.8, 0.1, 0.1};
  const auto s = split_indices(100, three, rng);
  CHECK(s[0].size() == 80);
  CHECK(s[1].size() == 10);
  CHECK(s[2].size() == 10);
  const std::vector<double> halves{0.5, 0.5};
  const auto h = split_indices(101, halves, rng);
  CHECK(h[0].size() == 51);
  CHECK(h[1].size() == 50);
  std::multiset<std::size_t> seen;
  for (const auto& part : h) seen.insert(part.begin(), part.end());
  CHECK(seen.size() == 101);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 101);
  const std::vector<double> bad{0.5, 0.6};
  CHECK_THROWS(split_indices(10, bad, rng));

  const Dataset d = synth_two_moons(50, 0.1, rng);
  const auto parts = split(d, halves, rng);
  CHECK(parts[0].size() + parts[1].size() == 50);
  CHECK(parts[0].num_classes == 2);
}

TEST_CASE("standardizer uses only the data it was fitted on") {
  Rng rng(5);
  Dataset d = synth_two_moons(500, 0.3, rng);
  const Standardizer st = Standardizer::fit(d);
  st.apply(d);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      sum += d.features.at(i, c);
      sq += d.features.at(i, c) * d.features.at(i, c);
    }
    CHECK(std::abs(sum / 500.0) < 1e-5);
    CHECK(sq / 500.0 == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("batch iterator") {
  Rng rng(6);
  const Dataset d = synth_two_moons(103, 0.1, rng);
  BatchIterator it(d, 10, 7, 0);
  CHECK(it.batches_per_epoch() == 11);
  std::multiset<std::size_t> seen;
  std::size_t batches = 0, last = 0;
  for (auto b = it.next(); !b.empty(); b = it.next()) {
    seen.insert(b.begin(), b.end());
    last = b.size();
    ++batches;
  }
  CHECK(batches == 11);
  CHECK(last == 3);
  CHECK(seen.size() == 103);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 103);
  CHECK(epoch_order(103, 7, 0) == epoch_order(103, 7, 0));
  CHECK(epoch_order(103, 7, 0) != epoch_order(103, 7, 1));
  CHECK(epoch_order(103, 7, 0) != epoch_order(103, 8, 0));
}
