// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace increg {

enum class Transpose { kNo, kYes };

/// Thread count used by gemm(). Initialised from PRUNE_THREADS (default 1).
int gemm_threads();
void set_gemm_threads(int threads);

/// C = alpha·op(A)·op(B) + beta·C, all row-major with leading dimensions.
///
/// Work is split across threads by rows of C and every element is reduced
/// over k in ascending order, so results are bit-identical for any thread
/// count on a given build.
template <typename T>
void gemm(Transpose trans_a, Transpose trans_b, std::size_t m, std::size_t n, std::size_t k,
          T alpha, const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

}  // namespace increg
