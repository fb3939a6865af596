#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "p2e/error.hpp"

namespace p2e {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Storage aligned for the widest vector unit so Eigen reductions split
/// their work the same way regardless of where the heap put the buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. The production scalar is float; double is used by
/// the numerical-gradient tests.
template <typename T>
struct BasicTensor {
  Shape shape;
  AlignedVector<T> data;

  BasicTensor() = default;
  explicit BasicTensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(shape_size(shape), fill) {}
  BasicTensor(Shape s, const std::vector<T>& values) : BasicTensor(std::move(s), AlignedVector<T>(values.begin(), values.end())) {}
  BasicTensor(Shape s, AlignedVector<T> values) : shape(std::move(s)), data(std::move(values)) {
    require(shape_size(shape) == data.size(), ErrorCode::shape,
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  // 1-D tensors behave as a single row.
  std::size_t rows() const { return shape.size() >= 2 ? shape.front() : 1; }
  std::size_t cols() const {
    if (shape.empty()) return 1;
    if (shape.size() == 1) return shape.front();
    return shape.front() == 0 ? shape_size(Shape(shape.begin() + 1, shape.end())) : size() / rows();
  }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  Eigen::Map<RowMatrix<T>> matrix() {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }
  Eigen::Map<const RowMatrix<T>> matrix() const {
    return {data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
  }

  bool all_finite() const {
    for (const T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;
};

using Tensor = BasicTensor<float>;

/// Copies the listed rows of a 2-D tensor into a new tensor.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& source, std::span<const std::size_t> indices) {
  const std::size_t width = source.cols();
  BasicTensor<T> out(Shape{indices.size(), width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = source.row(indices[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return out;
}

}  // namespace p2e
