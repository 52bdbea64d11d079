// SPDX-License-Identifier: Apache-2.0
#include "increg/sgd.hpp"

#include <algorithm>
#include <string>

#include "increg/errors.hpp"

namespace increg {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate: must be > 0, got " + std::to_string(learning_rate));
  }
  if (!(weight_decay >= 0.0)) {
    throw ConfigError("weight_decay: must be >= 0, got " + std::to_string(weight_decay));
  }
  if (batch_size == 0) throw ConfigError("batch_size: must be positive");
}

template <typename T>
void sgd_step(std::span<T> weights, std::span<const T> grads, std::span<const double> group_decay,
              const SgdConfig& cfg, std::span<const std::uint8_t> pruned) {
  if (grads.size() != weights.size() ||
      (!group_decay.empty() && group_decay.size() != weights.size()) ||
      (!pruned.empty() && pruned.size() != weights.size())) {
    throw ShapeError("sgd_step: buffer lengths disagree (weights " +
                     std::to_string(weights.size()) + ", grads " + std::to_string(grads.size()) +
                     ")");
  }
  const double lr = cfg.learning_rate;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!pruned.empty() && pruned[i]) {
      weights[i] = T(0);
      continue;
    }
    const double decay = cfg.weight_decay + (group_decay.empty() ? 0.0 : group_decay[i]);
    const T shrink = static_cast<T>(std::max(0.0, 1.0 - lr * decay));
    weights[i] = shrink * weights[i] - static_cast<T>(lr) * grads[i];
  }
}

template <typename T>
void sgd_step_plain(std::span<T> values, std::span<const T> grads, double learning_rate,
                    std::span<const std::uint8_t> pruned) {
  if (grads.size() != values.size() || (!pruned.empty() && pruned.size() != values.size())) {
    throw ShapeError("sgd_step_plain: buffer lengths disagree");
  }
  const T lr = static_cast<T>(learning_rate);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = (!pruned.empty() && pruned[i]) ? T(0) : values[i] - lr * grads[i];
  }
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<const double>,
                              const SgdConfig&, std::span<const std::uint8_t>);
template void sgd_step<double>(std::span<double>, std::span<const double>,
                               std::span<const double>, const SgdConfig&,
                               std::span<const std::uint8_t>);
template void sgd_step_plain<float>(std::span<float>, std::span<const float>, double,
                                    std::span<const std::uint8_t>);
template void sgd_step_plain<double>(std::span<double>, std::span<const double>, double,
                                     std::span<const std::uint8_t>);

}  // namespace increg
