// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "increg/tensor.hpp"

namespace increg {

/// Geometry of a 2-D convolution over a C×H×W input.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  /// Rows of the full patch matrix: C·kh·kw.
  std::size_t patch_size() const { return channels * kernel_h * kernel_w; }
  std::size_t out_h() const;
  std::size_t out_w() const;
  /// Throws ShapeError (mentioning `where`) unless output dims are positive.
  void validate(const std::string& where) const;
};

/// Unrolls input patches. Output has one row per patch element (c, ky, kx)
/// and one column per (batch, oy, ox) output position, columns ordered
/// batch-major. When `rows` is given only those patch rows are produced, in
/// the given order; this is the gather used by column-compacted layers.
template <typename T>
Matrix<T> im2col(const Tensor<T>& input, const ConvGeometry& geom,
                 std::optional<std::span<const std::size_t>> rows = std::nullopt);

/// Adjoint of im2col: scatters patch-matrix gradients back onto the input.
template <typename T>
Tensor<T> col2im(const Matrix<T>& cols, const ConvGeometry& geom, std::size_t batch,
                 std::optional<std::span<const std::size_t>> rows = std::nullopt);

/// Convolution via im2col + GEMM. weights are N×C×kh×kw, bias length N
/// (may be empty). Returns batch×N×out_h×out_w.
template <typename T>
Tensor<T> conv2d_im2col(const Tensor<T>& input, const Tensor<T>& weights,
                        std::span<const T> bias, std::size_t stride, std::size_t pad);

}  // namespace increg
