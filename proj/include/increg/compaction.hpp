// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "increg/network.hpp"
#include "increg/scheduler.hpp"

namespace increg {

/// What survived in one parameterised layer.
struct CompactLayerPlan {
  std::size_t layer = 0;
  /// Kept filters (conv) or output features (fc), original indices.
  std::vector<std::size_t> kept_rows;
  /// Kept im2col weight columns, original indices. Empty for fc layers and
  /// for conv layers whose columns were not pruned.
  std::vector<std::size_t> kept_columns;
  /// Input channels still present after upstream filter removal.
  std::vector<std::size_t> kept_input_channels;
};

struct CompactPlan {
  std::vector<CompactLayerPlan> layers;
};

template <typename T>
struct CompactModel {
  Network<T> model;
  CompactPlan plan;
};

/// Physically removes pruned groups. Row masks drop filters and the
/// matching input channels of the next parameterised layer (slices of the
/// first fc layer when the last conv is pruned). Column masks drop im2col
/// weight columns; the compacted layer gathers only the kept patch rows.
/// Throws ConfigError when a row mask removes every filter of a layer.
template <typename T>
CompactModel<T> build_compact(const Network<T>& masked, const MaskSet& masks);

struct EquivalenceReport {
  std::size_t inputs = 0;
  double max_abs_diff = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Runs both models on `inputs` seeded N(0,1) samples and compares logits.
template <typename T>
EquivalenceReport equivalence_check(Network<T>& masked, Network<T>& compact, std::size_t inputs,
                                    double tolerance, std::uint64_t seed);

/// Little-endian model file:
///   "PRNC" magic, u32 version (1), u32 input C, H, W, u32 classes,
///   u32 layer count, then per layer a u32 kind (0 conv, 1 fc, 2 relu,
///   3 pool) followed by
///     conv: u32 out, kernel, stride, pad, kept-column count K (0xFFFFFFFF
///           when dense) and K u32 column indices
///     fc:   u32 out
///     pool: u32 kernel, stride
///   and finally, for every conv/fc layer in order, float32 weights in
///   row-major im2col order (filter-major) followed by float32 biases.
void write_compact_model(const Network<float>& model, const std::filesystem::path& path);
Network<float> read_compact_model(const std::filesystem::path& path);

}  // namespace increg
