#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cigl {

/// Dense row-major float32 array with shape metadata.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values);

  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  float& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  std::span<float> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * shape[1], shape[1]}; }

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Row-major float64 matrix used for logits and probabilities, where float32
/// rounding would swamp the tolerances of downstream metrics.
struct DoubleMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DoubleMatrix() = default;
  DoubleMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const DoubleMatrix&, const DoubleMatrix&) = default;
};

std::size_t shape_numel(std::span<const std::size_t> shape);

/// Copies rows `indices` of a rank-2 tensor into a new tensor.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices);

}  // namespace cigl
