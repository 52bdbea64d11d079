// SPDX-License-Identifier: Apache-2.0
#include "increg/im2col.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "increg/gemm.hpp"

namespace increg {

std::string to_string(const Shape4& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);

std::size_t ConvGeometry::out_h() const {
  const std::size_t padded = height + 2 * pad;
  return padded < kernel_h || stride == 0 ? 0 : (padded - kernel_h) / stride + 1;
}

std::size_t ConvGeometry::out_w() const {
  const std::size_t padded = width + 2 * pad;
  return padded < kernel_w || stride == 0 ? 0 : (padded - kernel_w) / stride + 1;
}

void ConvGeometry::validate(const std::string& where) const {
  if (channels == 0 || height == 0 || width == 0 || kernel_h == 0 || kernel_w == 0 ||
      stride == 0 || out_h() == 0 || out_w() == 0) {
    throw ShapeError(where + ": kernel " + std::to_string(kernel_h) + "x" +
                     std::to_string(kernel_w) + " stride " + std::to_string(stride) + " pad " +
                     std::to_string(pad) + " does not fit input " + std::to_string(channels) +
                     "x" + std::to_string(height) + "x" + std::to_string(width));
  }
}

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

}  // namespace

template <typename T>
Matrix<T> im2col(const Tensor<T>& input, const ConvGeometry& geom,
                 std::optional<std::span<const std::size_t>> rows) {
  const Shape4& s = input.shape();
  if (s.c != geom.channels || s.h != geom.height || s.w != geom.width) {
    throw ShapeError("im2col: input " + to_string(s) + " does not match geometry");
  }
  geom.validate("im2col");
  std::vector<std::size_t> full;
  if (!rows) {
    full = all_rows(geom.patch_size());
    rows = std::span<const std::size_t>(full);
  }
  const std::size_t oh = geom.out_h(), ow = geom.out_w();
  const std::size_t positions = oh * ow;
  Matrix<T> out(rows->size(), positions * s.n);
  const std::size_t kk = geom.kernel_h * geom.kernel_w;
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const std::size_t row = (*rows)[r];
    const std::size_t c = row / kk;
    const std::size_t ky = (row % kk) / geom.kernel_w;
    const std::size_t kx = row % geom.kernel_w;
    T* dst = &out(r, 0);
    // Output columns whose input x lies inside the image: [ox_lo, ox_hi).
    const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(geom.stride);
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(geom.pad);
    std::size_t ox_lo = 0;
    while (ox_lo < ow && static_cast<std::ptrdiff_t>(ox_lo) * stride + shift < 0) ++ox_lo;
    std::size_t ox_hi = ox_lo;
    while (ox_hi < ow &&
           static_cast<std::ptrdiff_t>(ox_hi) * stride + shift < static_cast<std::ptrdiff_t>(s.w))
      ++ox_hi;
    for (std::size_t b = 0; b < s.n; ++b) {
      const T* plane = input.data() + (b * s.c + c) * s.h * s.w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geom.stride + ky) -
                                  static_cast<std::ptrdiff_t>(geom.pad);
        T* line = dst + b * positions + oy * ow;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) {
          std::fill(line, line + ow, T(0));
          continue;
        }
        const T* src = plane + static_cast<std::size_t>(iy) * s.w;
        std::fill(line, line + ox_lo, T(0));
        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox)
          line[ox] = src[static_cast<std::ptrdiff_t>(ox) * stride + shift];
        std::fill(line + ox_hi, line + ow, T(0));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> col2im(const Matrix<T>& cols, const ConvGeometry& geom, std::size_t batch,
                 std::optional<std::span<const std::size_t>> rows) {
  std::vector<std::size_t> full;
  if (!rows) {
    full = all_rows(geom.patch_size());
    rows = std::span<const std::size_t>(full);
  }
  const std::size_t oh = geom.out_h(), ow = geom.out_w();
  const std::size_t positions = oh * ow;
  if (cols.rows != rows->size() || cols.cols != positions * batch) {
    throw ShapeError("col2im: patch matrix dims do not match geometry");
  }
  Tensor<T> out(Shape4{batch, geom.channels, geom.height, geom.width});
  const std::size_t kk = geom.kernel_h * geom.kernel_w;
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const std::size_t row = (*rows)[r];
    const std::size_t c = row / kk;
    const std::size_t ky = (row % kk) / geom.kernel_w;
    const std::size_t kx = row % geom.kernel_w;
    const T* src = &cols(r, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geom.stride + ky) -
                                  static_cast<std::ptrdiff_t>(geom.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geom.height)) continue;
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geom.stride + kx) -
                                    static_cast<std::ptrdiff_t>(geom.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geom.width)) continue;
          out(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
              src[b * positions + oy * ow + ox];
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_im2col(const Tensor<T>& input, const Tensor<T>& weights,
                        std::span<const T> bias, std::size_t stride, std::size_t pad) {
  const Shape4& ws = weights.shape();
  const Shape4& is = input.shape();
  if (ws.c != is.c) {
    throw ShapeError("conv2d: weights " + to_string(ws) + " vs input " + to_string(is));
  }
  ConvGeometry g{is.c, is.h, is.w, ws.h, ws.w, stride, pad};
  const Matrix<T> cols = im2col(input, g);
  const std::size_t positions = g.out_h() * g.out_w();
  Matrix<T> y(ws.n, cols.cols);
  gemm(Transpose::kNo, Transpose::kNo, ws.n, cols.cols, cols.rows, T(1), weights.data(),
       ws.inner(), cols.data.data(), cols.cols, T(0), y.data.data(), y.cols);
  Tensor<T> out(Shape4{is.n, ws.n, g.out_h(), g.out_w()});
  for (std::size_t f = 0; f < ws.n; ++f) {
    const T b = bias.empty() ? T(0) : bias[f];
    for (std::size_t n = 0; n < is.n; ++n) {
      T* dst = &out(n, f, 0, 0);
      const T* src = &y(f, n * positions);
      for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
    }
  }
  return out;
}

#define INCREG_INSTANTIATE(T)                                                          \
  template Matrix<T> im2col<T>(const Tensor<T>&, const ConvGeometry&,                  \
                               std::optional<std::span<const std::size_t>>);           \
  template Tensor<T> col2im<T>(const Matrix<T>&, const ConvGeometry&, std::size_t,     \
                               std::optional<std::span<const std::size_t>>);           \
  template Tensor<T> conv2d_im2col<T>(const Tensor<T>&, const Tensor<T>&,              \
                                      std::span<const T>, std::size_t, std::size_t);
INCREG_INSTANTIATE(float)
INCREG_INSTANTIATE(double)
#undef INCREG_INSTANTIATE

}  // namespace increg
