// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "increg/network.hpp"

namespace increg {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// Relative error is |a - n| / max(|a|, |n|, denominator_floor).
  double denominator_floor = 1e-4;
};

struct LayerGradError {
  std::string layer;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose ±step probe changed the ReLU/max-pool pattern; the
  /// loss is not differentiable across such a kink so they are not scored.
  std::size_t skipped_kinks = 0;
  bool flagged = false;
};

struct GradCheckReport {
  std::vector<LayerGradError> layers;
  double max_rel_error = 0.0;
  bool passed() const;
};

/// Compares backward() against central differences of the loss, layer by
/// layer. Parameters are restored afterwards.
GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input,
                           std::span<const int> labels, const GradCheckOptions& opts = {});

/// Same comparison against caller-supplied analytic gradients (indexed by
/// layer like Network::grads()).
GradCheckReport compare_gradients(Network<double>& net, const Tensor<double>& input,
                                  std::span<const int> labels,
                                  const std::vector<ParamBlock<double>>& analytic,
                                  const GradCheckOptions& opts = {});

}  // namespace increg
