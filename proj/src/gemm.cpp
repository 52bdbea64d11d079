// SPDX-License-Identifier: Apache-2.0
#include "increg/gemm.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace increg {
namespace {

int threads_from_env() {
  if (const char* env = std::getenv("PRUNE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{threads_from_env()};
  return threads;
}

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockN = 256;

// Rows [row_begin, row_end) of C += alpha·A·B, with A and B untransposed.
template <typename T>
void gemm_nn_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
                  T alpha, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
                  std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t kk = 0; kk < k; kk += kBlockK) {
    const std::size_t k_end = std::min(k, kk + kBlockK);
    for (std::size_t jj = 0; jj < n; jj += kBlockN) {
      const std::size_t nb = std::min(n, jj + kBlockN) - jj;
      for (std::size_t i = row_begin; i < row_end; ++i) {
        T* __restrict crow = c + i * ldc + jj;
        const T* arow = a + i * a_row;
        for (std::size_t p = kk; p < k_end; ++p) {
          const T av = alpha * arow[p * a_col];
          const T* __restrict brow = b + p * ldb + jj;
          for (std::size_t j = 0; j < nb; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols, std::size_t ld) {
  // src is rows×cols (leading dim ld); result is cols×rows, dense.
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = src[i * ld + j];
  return out;
}

template <typename T>
void gemm_nt_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
                  T alpha, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
                  std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * ldb;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * a_row + p * a_col] * brow[p];
      c[i * ldc + j] += alpha * acc;
    }
  }
}


}  // namespace

int gemm_threads() { return thread_setting().load(); }

void set_gemm_threads(int threads) { thread_setting().store(std::max(1, threads)); }

template <typename T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0) return;

  // A is addressed through (row, column) strides, so Aᵀ needs no copy.
  const std::size_t a_row = trans_a == Transpose::kYes ? 1 : lda;
  const std::size_t a_col = trans_a == Transpose::kYes ? lda : 1;
  // Bᵀ is materialised so the kernel always streams rows of B.
  std::vector<T> b_buf;
  if (trans_b == Transpose::kYes) {
    b_buf = transposed(b, n, k, ldb);
    b = b_buf.data();
    ldb = n;
  }
  auto kernel = [=](std::size_t begin, std::size_t end) {
    gemm_nn_rows(begin, end, n, k, alpha, a, a_row, a_col, b, ldb, c, ldc);
  };

  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(gemm_threads()), m);
  if (threads <= 1) {
    kernel(0, m);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (m + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(m, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([=] { kernel(begin, end); });
  }
  for (auto& th : pool) th.join();
}

template void gemm<float>(Transpose, Transpose, std::size_t, std::size_t, std::size_t, float,
                          const float*, std::size_t, const float*, std::size_t, float, float*,
                          std::size_t);
template void gemm<double>(Transpose, Transpose, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double,
                           double*, std::size_t);

}  // namespace increg
