// SPDX-License-Identifier: Apache-2.0
#include "increg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace increg {

bool GradCheckReport::passed() const {
  return std::none_of(layers.begin(), layers.end(), [](const auto& l) { return l.flagged; });
}

namespace {

void score(LayerGradError& out, double analytic, double numeric, const GradCheckOptions& opts) {
  const double abs_err = std::abs(analytic - numeric);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.denominator_floor});
  out.max_abs_error = std::max(out.max_abs_error, abs_err);
  out.max_rel_error = std::max(out.max_rel_error, abs_err / denom);
  ++out.checked;
}

}  // namespace

GradCheckReport compare_gradients(Network<double>& net, const Tensor<double>& input,
                                  std::span<const int> labels,
                                  const std::vector<ParamBlock<double>>& analytic,
                                  const GradCheckOptions& opts) {
  net.forward(input, labels);
  const std::uint64_t base_signature = net.activation_signature();
  const double h = opts.step;

  // Central difference for one scalar; nullopt when the probe crosses a kink.
  auto probe = [&](double& slot) -> std::optional<double> {
    const double saved = slot;
    slot = saved + h;
    const double plus = net.forward(input, labels);
    const bool plus_smooth = net.activation_signature() == base_signature;
    slot = saved - h;
    const double minus = net.forward(input, labels);
    const bool minus_smooth = net.activation_signature() == base_signature;
    slot = saved;
    if (!plus_smooth || !minus_smooth) return std::nullopt;
    return (plus - minus) / (2.0 * h);
  };

  GradCheckReport report;
  for (std::size_t layer : net.spec().param_layers()) {
    LayerGradError err;
    err.layer = net.spec().layer_name(layer);
    auto& p = net.params(layer);
    const auto& a = analytic.at(layer);
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      if (auto numeric = probe(p.weight.storage()[i])) {
        score(err, a.weight.storage()[i], *numeric, opts);
      } else {
        ++err.skipped_kinks;
      }
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      if (auto numeric = probe(p.bias[i])) {
        score(err, a.bias[i], *numeric, opts);
      } else {
        ++err.skipped_kinks;
      }
    }
    err.flagged = err.max_rel_error >= opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, err.max_rel_error);
    report.layers.push_back(std::move(err));
  }
  // Leave the caches consistent with the restored parameters.
  net.forward(input, labels);
  return report;
}

GradCheckReport grad_check(Network<double>& net, const Tensor<double>& input,
                           std::span<const int> labels, const GradCheckOptions& opts) {
  net.forward(input, labels);
  net.backward();
  std::vector<ParamBlock<double>> analytic(net.layer_count());
  for (std::size_t layer : net.spec().param_layers()) analytic[layer] = net.grads(layer);
  return compare_gradients(net, input, labels, analytic, opts);
}

}  // namespace increg
