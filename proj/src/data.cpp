#include "cigl/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cigl/error.hpp"

namespace cigl {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError(what + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

}  // namespace

void Dataset::validate() const {
  if (features.rank() != 2 || features.shape[0] != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(labels.size()) + " labels for features " +
                     features.shape_string());
  }
  for (auto y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  if (!features.all_finite()) throw Error("dataset features contain NaN or Inf");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = gather_rows(features, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  out.num_classes = num_classes;
  out.provenance = provenance;
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty dataset");
  const auto header = split_csv_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw FormatError(path.string() + ": missing label column '" + label_column + "'");
  }
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t d = header.size() - 1;

  std::vector<float> values;
  std::vector<std::int32_t> labels;
  std::unordered_map<std::string, std::int32_t> remap;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_idx) {
        if (cells[c].empty()) throw FormatError(path.string() + ": row " + std::to_string(row) + ": empty label");
        auto [it, inserted] = remap.try_emplace(cells[c], static_cast<std::int32_t>(remap.size()));
        labels.push_back(it->second);
        continue;
      }
      double v = 0.0;
      const auto& cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw FormatError(path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                          " ('" + header[c] + "'): non-numeric value '" + cell + "'");
      }
      values.push_back(static_cast<float>(v));
    }
  }
  if (labels.empty()) throw FormatError(path.string() + ": empty dataset");
  if (d == 0) throw FormatError(path.string() + ": no feature columns");

  Dataset out;
  out.features = Tensor({labels.size(), d}, std::move(values));
  out.labels = std::move(labels);
  out.num_classes = remap.size();
  out.provenance = "csv:" + path.string();
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path, const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write CSV file " + path.string());
  const std::size_t d = data.dim();
  for (std::size_t c = 0; c < d; ++c) out << 'f' << c << ',';
  out << label_column << '\n';
  out << std::setprecision(9);
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (float v : data.features.row(n)) out << v << ',';
    out << data.labels[n] << '\n';
  }
  if (!out) throw FormatError("failed writing CSV file " + path.string());
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open IDX images " + images_path.string());
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open IDX labels " + labels_path.string());

  const auto img_magic = read_be32(img, images_path.string());
  if (img_magic != 0x00000803) {
    throw FormatError(images_path.string() + ": bad magic, expected 0x00000803 for u8 images");
  }
  const auto count = read_be32(img, images_path.string());
  const auto rows = read_be32(img, images_path.string());
  const auto cols = read_be32(img, images_path.string());

  const auto lab_magic = read_be32(lab, labels_path.string());
  if (lab_magic != 0x00000801) {
    throw FormatError(labels_path.string() + ": bad magic, expected 0x00000801 for u8 labels");
  }
  const auto label_count = read_be32(lab, labels_path.string());
  if (label_count != count) {
    throw FormatError("IDX count mismatch: " + std::to_string(count) + " images vs " + std::to_string(label_count) +
                      " labels");
  }
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty dataset");

  const std::size_t d = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(std::size_t{count} * d);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw FormatError(images_path.string() + ": truncated pixel payload");
  }
  std::vector<unsigned char> raw_labels(count);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size()))) {
    throw FormatError(labels_path.string() + ": truncated label payload");
  }

  Dataset out;
  out.features = Tensor({count, d});
  std::transform(pixels.begin(), pixels.end(), out.features.data.begin(),
                 [](unsigned char p) { return static_cast<float>(p) / 255.0f; });
  out.labels.assign(raw_labels.begin(), raw_labels.end());
  out.num_classes = static_cast<std::size_t>(*std::max_element(raw_labels.begin(), raw_labels.end())) + 1;
  out.provenance = "idx:" + images_path.string();
  return out;
}

Dataset synth_two_moons(std::size_t n, double noise_sd, Rng& rng) {
  if (n < 2) throw ConfigError("data.n", "two moons needs at least two samples");
  if (!(noise_sd >= 0.0)) throw ConfigError("data.noise_sd", "must be non-negative");
  const std::size_t n0 = (n + 1) / 2;
  const std::size_t n1 = n / 2;
  std::vector<float> xs;
  std::vector<std::int32_t> ys;
  xs.reserve(2 * n);
  auto angle = [](std::size_t i, std::size_t count) {
    return count == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
  };
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = angle(i, n0);
    xs.push_back(static_cast<float>(std::cos(t)));
    xs.push_back(static_cast<float>(std::sin(t)));
    ys.push_back(0);
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = angle(i, n1);
    xs.push_back(static_cast<float>(1.0 - std::cos(t)));
    xs.push_back(static_cast<float>(0.5 - std::sin(t)));
    ys.push_back(1);
  }
  if (noise_sd > 0.0) {
    for (float& v : xs) v = static_cast<float>(v + noise_sd * rng.normal());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  Dataset base;
  base.features = Tensor({n, 2}, std::move(xs));
  base.labels = std::move(ys);
  base.num_classes = 2;
  Dataset out = base.subset(order);
  std::ostringstream prov;
  prov << "two_moons(n=" << n << ",noise_sd=" << noise_sd << ")";
  out.provenance = prov.str();
  return out;
}

NoisyLabels inject_label_noise(const Dataset& data, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("data.label_noise", "must lie in [0, 1]");
  NoisyLabels out{data, {}};
  if (data.num_classes < 2) return out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!rng.bernoulli(rate)) continue;
    auto other = static_cast<std::int32_t>(rng.uniform_int(data.num_classes - 1));
    if (other >= data.labels[i]) ++other;
    out.data.labels[i] = other;
    out.flipped.push_back(i);
  }
  return out;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, Rng& rng) {
  if (fractions.empty()) throw ConfigError("data.splits", "need at least one split fraction");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("data.splits", "fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data.splits", "fractions must sum to 1");

  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (double f : fractions) {
    sizes.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)));
    used += sizes.back();
  }
  sizes.front() += n - used;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> parts;
  std::size_t pos = 0;
  for (auto s : sizes) {
    parts.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + s));
    pos += s;
  }
  return parts;
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, Rng& rng) {
  std::vector<Dataset> out;
  for (const auto& idx : split_indices(data.size(), fractions, rng)) out.push_back(data.subset(idx));
  return out;
}

Standardizer Standardizer::fit(const Dataset& data) {
  const std::size_t d = data.dim();
  const std::size_t n = data.size();
  if (n == 0) throw Error("cannot standardize an empty dataset");
  Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += data.features.at(i, c);
  }
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dv = data.features.at(i, c) - s.mean[c];
      s.scale[c] += dv * dv;
    }
  }
  for (auto& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v == 0.0) v = 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& data) const {
  if (data.dim() != mean.size()) throw ShapeError("standardizer fitted on a different feature count");
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = data.features.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = static_cast<float>((row[c] - mean[c]) / scale[c]);
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, "data.shuffle", epoch);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch)
    : batch_size_(batch_size), order_(epoch_order(data.size(), seed, epoch)) {
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
}

std::span<const std::size_t> BatchIterator::next() {
  if (cursor_ >= order_.size()) return {};
  const std::size_t len = std::min(batch_size_, order_.size() - cursor_);
  std::span<const std::size_t> batch(order_.data() + cursor_, len);
  cursor_ += len;
  return batch;
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

}  // namespace cigl
