// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "increg/config.hpp"
#include "increg/groups.hpp"

namespace increg {

/// One benchmark row. Times are medians in milliseconds.
struct BenchRow {
  std::string layer_id;
  GroupType mode = GroupType::kRow;
  double sparsity = 0.0;
  double dense_ms = 0.0;
  /// Column mode includes the patch-row gather.
  double compact_ms = 0.0;
  /// Compact GEMM alone (equals compact_ms in row mode).
  double compact_gemm_ms = 0.0;
  double speedup = 0.0;
  double dense_mean_ms = 0.0;
  double compact_mean_ms = 0.0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t positions = 0;
  std::size_t kept = 0;
  std::size_t batch = 1;
  std::size_t reps = 0;
  /// Calls per timed sample after repetition scaling.
  std::size_t inner_calls = 1;
  int threads = 1;
};

struct BenchOptions {
  std::size_t reps = 50;
  std::size_t warmup = 3;
  std::size_t batch = 1;
  /// Samples shorter than this are scaled up by repeating the call.
  double min_sample_ms = 2.0;
  std::uint64_t seed = 1;
};

/// Times dense rows×cols · cols×(positions·batch) against the GEMM left
/// after removing `sparsity` of the rows (row mode) or of the columns
/// (column mode). Dense and compact samples are interleaved.
/// Throws ConfigError when reps < 50 or the shape is empty.
BenchRow bench_layer(const BenchShape& shape, double sparsity, GroupType mode,
                     const BenchOptions& opts, std::string layer_id = "gemm");

/// layer_id,mode,sparsity,dense_ms,compact_ms,speedup followed by the
/// remaining diagnostic columns.
std::string bench_csv(const std::vector<BenchRow>& rows);

/// Machine and build details recorded next to bench results.
std::string environment_note();

}  // namespace increg
