#include "cigl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "cigl/error.hpp"

namespace cigl {

std::size_t shape_numel(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> s, float fill) : shape(std::move(s)) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  }
  data.assign(shape_numel(shape), fill);
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<float> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor of shape " + shape_string() + " cannot hold " +
                     std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<float> values) {
  return Tensor({rows, cols}, std::vector<float>(values));
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw ShapeError("expected a matrix, got shape " + shape_string());
  return shape[1];
}

bool Tensor::all_finite() const noexcept {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  const std::size_t cols = t.cols();
  Tensor out;
  out.shape = {indices.size(), cols};
  out.data.resize(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace cigl
