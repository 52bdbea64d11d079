// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace increg {

struct SgdConfig {
  double learning_rate = 0.01;
  /// Base (unstructured) weight decay λ applied to every weight.
  double weight_decay = 0.0;
  std::size_t batch_size = 32;

  /// Throws ConfigError when learning_rate <= 0, weight_decay < 0 or
  /// batch_size == 0.
  void validate() const;
};

/// One plain SGD step on a weight buffer:
///   w <- w - lr·(grad + λ·w + λ_g(w)·w)
/// `group_decay` holds λ_g for each weight (empty means zero everywhere).
/// Entries with `pruned[i] != 0` are forced to exactly zero.
///
/// The combined shrink factor 1 - lr·(λ + λ_g) is floored at zero, so the
/// decay term never carries a weight past zero.
template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<const double> group_decay,
              const SgdConfig& cfg, std::span<const std::uint8_t> pruned = {});

/// SGD step without decay, used for biases.
template <typename T>
void sgd_step_plain(std::span<T> values, std::span<const T> grads, double learning_rate,
                    std::span<const std::uint8_t> pruned = {});

}  // namespace increg
