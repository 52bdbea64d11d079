// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "increg/errors.hpp"

namespace increg {

/// Dimensions of a 4-D tensor. For weights: (filters, channels, height,
/// width). For activations: (batch, channels, height, width).
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t count() const { return n * c * h * w; }
  /// Elements per leading index (C·H·W).
  std::size_t inner() const { return c * h * w; }
  bool operator==(const Shape4&) const = default;
};

std::string to_string(const Shape4& s);

/// Row-major matrix view over contiguous storage.
template <typename T>
struct MatrixView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<T> data;

  T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<T> row(std::size_t i) const { return data.subspan(i * cols, cols); }
};

/// Dense N×C×H×W tensor, row-major over (N, C, H, W).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.count(), fill) {}
  Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// The im2col weight-matrix view: row i is filter i, column j is the
  /// flattened (c, h, w) shape position.
  MatrixView<T> im2col_view() { return {shape_.n, shape_.inner(), std::span<T>(data_)}; }
  MatrixView<const T> im2col_view() const {
    return {shape_.n, shape_.inner(), std::span<const T>(data_)};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterpret with a new shape of equal element count.
  void reshape(Shape4 shape) {
    if (shape.count() != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = shape;
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Dense row-major matrix owning its storage.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  MatrixView<T> view() { return {rows, cols, std::span<T>(data)}; }
  MatrixView<const T> view() const { return {rows, cols, std::span<const T>(data)}; }
};

/// True when every entry is finite.
template <typename T>
bool all_finite(std::span<const T> v);

}  // namespace increg
