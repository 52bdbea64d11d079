// SPDX-License-Identifier: Apache-2.0
#include "increg/network.hpp"

#include <algorithm>
#include <cmath>

#include "increg/gemm.hpp"
#include "increg/rng.hpp"

namespace increg {

bool is_conv(const LayerSpec& l) { return std::holds_alternative<ConvSpec>(l); }
bool is_fc(const LayerSpec& l) { return std::holds_alternative<FcSpec>(l); }

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ConvGeometry geometry_for(const ConvSpec& conv, const Shape3& in) {
  return ConvGeometry{in.c, in.h, in.w, conv.kernel, conv.kernel, conv.stride, conv.pad};
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
}

}  // namespace

std::string NetworkSpec::layer_name(std::size_t index) const {
  std::size_t ordinal = 0;
  const std::size_t kind = layers.at(index).index();
  for (std::size_t i = 0; i <= index; ++i)
    if (layers[i].index() == kind) ++ordinal;
  static constexpr const char* kNames[] = {"conv", "fc", "relu", "pool"};
  return kNames[kind] + std::to_string(ordinal);
}

std::vector<Shape3> NetworkSpec::output_shapes() const {
  std::vector<Shape3> out;
  out.reserve(layers.size());
  Shape3 cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string name = layer_name(i);
    cur = std::visit(
        Overloaded{
            [&](const ConvSpec& c) {
              if (c.out_channels == 0) throw ShapeError(name + ": zero output channels");
              const ConvGeometry g = geometry_for(c, cur);
              g.validate(name);
              if (c.kept_columns) {
                const auto& kept = *c.kept_columns;
                for (std::size_t j = 0; j < kept.size(); ++j) {
                  if (kept[j] >= g.patch_size() || (j > 0 && kept[j] <= kept[j - 1])) {
                    throw ShapeError(name + ": kept columns must be sorted, unique and < " +
                                     std::to_string(g.patch_size()));
                  }
                }
              }
              return Shape3{c.out_channels, g.out_h(), g.out_w()};
            },
            [&](const FcSpec& f) {
              if (f.out_features == 0) throw ShapeError(name + ": zero output features");
              if (cur.count() == 0) throw ShapeError(name + ": empty input");
              return Shape3{f.out_features, 1, 1};
            },
            [&](const ReluSpec&) { return cur; },
            [&](const MaxPoolSpec& p) {
              if (p.kernel == 0 || p.stride == 0 || cur.h < p.kernel || cur.w < p.kernel) {
                throw ShapeError(name + ": pooling window " + std::to_string(p.kernel) +
                                 " does not fit " + std::to_string(cur.h) + "x" +
                                 std::to_string(cur.w));
              }
              return Shape3{cur.c, (cur.h - p.kernel) / p.stride + 1,
                            (cur.w - p.kernel) / p.stride + 1};
            }},
        layers[i]);
    out.push_back(cur);
  }
  return out;
}

std::vector<Shape3> NetworkSpec::input_shapes() const {
  std::vector<Shape3> outs = output_shapes();
  std::vector<Shape3> ins(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) ins[i] = i == 0 ? input : outs[i - 1];
  return ins;
}

void NetworkSpec::validate() const {
  if (input.count() == 0) throw ShapeError("network input shape is empty");
  if (layers.empty()) throw ShapeError("network has no layers");
  const std::vector<Shape3> outs = output_shapes();
  if (!is_fc(layers.back())) throw ShapeError("last layer must be fc before the softmax head");
  if (outs.back().c != num_classes) {
    throw ShapeError(layer_name(layers.size() - 1) + ": outputs " +
                     std::to_string(outs.back().c) + " but head expects " +
                     std::to_string(num_classes) + " classes");
  }
  const std::size_t convs = conv_layers().size();
  if (!prune_ratios.empty() && prune_ratios.size() != convs) {
    throw ConfigError("prune_ratios: expected " + std::to_string(convs) + " values, got " +
                      std::to_string(prune_ratios.size()));
  }
  for (double r : prune_ratios) {
    if (!(r >= 0.0 && r < 1.0)) {
      throw ConfigError("prune_ratios: ratio " + std::to_string(r) + " outside [0, 1)");
    }
  }
}

std::vector<std::size_t> NetworkSpec::conv_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (is_conv(layers[i])) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> NetworkSpec::param_layers() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (is_conv(layers[i]) || is_fc(layers[i])) idx.push_back(i);
  return idx;
}

std::vector<double> NetworkSpec::conv_flops() const {
  const auto ins = input_shapes();
  const auto outs = output_shapes();
  std::vector<double> flops;
  for (std::size_t i : conv_layers()) {
    const auto& c = std::get<ConvSpec>(layers[i]);
    const double k = c.kept_columns ? static_cast<double>(c.kept_columns->size())
                                    : static_cast<double>(ins[i].c * c.kernel * c.kernel);
    flops.push_back(static_cast<double>(outs[i].count()) * k);
  }
  return flops;
}

Shape4 weight_shape(const NetworkSpec& spec, std::size_t layer) {
  const auto ins = spec.input_shapes();
  const auto outs = spec.output_shapes();
  const LayerSpec& l = spec.layers.at(layer);
  if (const auto* c = std::get_if<ConvSpec>(&l)) {
    if (c->kept_columns) return Shape4{c->out_channels, c->kept_columns->size(), 1, 1};
    return Shape4{c->out_channels, ins[layer].c, c->kernel, c->kernel};
  }
  if (const auto* f = std::get_if<FcSpec>(&l)) {
    return Shape4{f->out_features, ins[layer].count(), 1, 1};
  }
  return Shape4{};
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  in_shapes_ = spec_.input_shapes();
  out_shapes_ = spec_.output_shapes();
  params_.resize(layer_count());
  Rng rng(seed);
  for (std::size_t i : spec_.param_layers()) {
    const Shape4 ws = weight_shape(spec_, i);
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, ws.inner())));
    Tensor<T> w(ws);
    for (T& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    params_[i].weight = std::move(w);
    params_[i].bias.assign(ws.n, T(0));
  }
  grads_ = params_;
  cache_.resize(layer_count());
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::vector<ParamBlock<T>> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  in_shapes_ = spec_.input_shapes();
  out_shapes_ = spec_.output_shapes();
  check_params();
  grads_ = params_;
  cache_.resize(layer_count());
}

template <typename T>
void Network<T>::check_params() const {
  if (params_.size() != layer_count()) {
    throw ShapeError("parameter list has " + std::to_string(params_.size()) +
                     " blocks for " + std::to_string(layer_count()) + " layers");
  }
  for (std::size_t i : spec_.param_layers()) {
    const Shape4 expect = weight_shape(spec_, i);
    if (params_[i].weight.shape() != expect) {
      throw ShapeError(spec_.layer_name(i) + ": weight shape " +
                       to_string(params_[i].weight.shape()) + ", expected " + to_string(expect));
    }
    if (params_[i].bias.size() != expect.n) {
      throw ShapeError(spec_.layer_name(i) + ": bias length mismatch");
    }
  }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

template <typename T>
Tensor<T> Network<T>::run(const Tensor<T>& input, bool keep_cache) {
  const Shape4& s = input.shape();
  if (s.c != spec_.input.c || s.h != spec_.input.h || s.w != spec_.input.w || s.n == 0) {
    throw ShapeError("input batch " + to_string(s) + " does not match network input " +
                     std::to_string(spec_.input.c) + "x" + std::to_string(spec_.input.h) + "x" +
                     std::to_string(spec_.input.w));
  }
  const std::size_t batch = s.n;
  std::uint64_t sig = kFnvOffset;
  Tensor<T> x = input;
  for (std::size_t i = 0; i < layer_count(); ++i) {
    const Shape3& in = in_shapes_[i];
    const Shape3& out = out_shapes_[i];
    LayerCache& cache = cache_[i];
    Tensor<T> y(Shape4{batch, out.c, out.h, out.w});
    std::visit(
        Overloaded{
            [&](const ConvSpec& c) {
              const ConvGeometry g = geometry_for(c, in);
              std::optional<std::span<const std::size_t>> rows;
              if (c.kept_columns) rows = std::span<const std::size_t>(*c.kept_columns);
              Matrix<T> cols = im2col(x, g, rows);
              const std::size_t positions = out.h * out.w;
              Matrix<T> prod(out.c, cols.cols);
              const auto& w = params_[i].weight;
              gemm(Transpose::kNo, Transpose::kNo, out.c, cols.cols, cols.rows, T(1), w.data(),
                   cols.rows, cols.data.data(), cols.cols, T(0), prod.data.data(), prod.cols);
              for (std::size_t f = 0; f < out.c; ++f) {
                const T b = params_[i].bias[f];
                for (std::size_t n = 0; n < batch; ++n) {
                  T* dst = &y(n, f, 0, 0);
                  const T* src = &prod(f, n * positions);
                  for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
                }
              }
              if (keep_cache) cache.cols = std::move(cols);
            },
            [&](const FcSpec&) {
              const std::size_t in_features = in.count();
              const auto& w = params_[i].weight;
              gemm(Transpose::kNo, Transpose::kYes, batch, out.c, in_features, T(1), x.data(),
                   in_features, w.data(), in_features, T(0), y.data(), out.c);
              for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t o = 0; o < out.c; ++o) y(n, o, 0, 0) += params_[i].bias[o];
              if (keep_cache) cache.input = x;
            },
            [&](const ReluSpec&) {
              auto src = x.values();
              auto dst = y.values();
              for (std::size_t j = 0; j < src.size(); ++j) {
                const bool on = src[j] > T(0);
                dst[j] = on ? src[j] : T(0);
                sig = (sig ^ static_cast<std::uint64_t>(on)) * kFnvPrime;
              }
              if (keep_cache) cache.input = x;
            },
            [&](const MaxPoolSpec& p) {
              if (keep_cache) cache.argmax.assign(y.size(), 0);
              std::size_t o = 0;
              for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t ch = 0; ch < out.c; ++ch) {
                  for (std::size_t oy = 0; oy < out.h; ++oy) {
                    for (std::size_t ox = 0; ox < out.w; ++ox, ++o) {
                      std::size_t best = x.index(n, ch, oy * p.stride, ox * p.stride);
                      for (std::size_t ky = 0; ky < p.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < p.kernel; ++kx) {
                          const std::size_t idx =
                              x.index(n, ch, oy * p.stride + ky, ox * p.stride + kx);
                          if (x.storage()[idx] > x.storage()[best]) best = idx;
                        }
                      }
                      y.storage()[o] = x.storage()[best];
                      fnv_mix(sig, best);
                      if (keep_cache) cache.argmax[o] = static_cast<std::uint32_t>(best);
                    }
                  }
                }
              }
            }},
        spec_.layers[i]);
    if (!all_finite<T>(y.values())) {
      throw NumericError("non-finite activations at layer " + spec_.layer_name(i));
    }
    x = std::move(y);
  }
  if (keep_cache) {
    batch_ = batch;
    signature_ = sig;
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& input) {
  return run(input, false);
}

template <typename T>
T Network<T>::forward(const Tensor<T>& input, std::span<const int> labels) {
  if (labels.size() != input.shape().n) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != batch size " +
                     std::to_string(input.shape().n));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= spec_.num_classes) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(spec_.num_classes) + ")");
    }
  }
  logits_ = run(input, true);
  labels_.assign(labels.begin(), labels.end());
  const std::size_t k = spec_.num_classes;
  probs_.assign(batch_ * k, T(0));
  T total = T(0);
  for (std::size_t n = 0; n < batch_; ++n) {
    const T* z = &logits_(n, 0, 0, 0);
    const T zmax = *std::max_element(z, z + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const T log_sum = std::log(sum) + zmax;
    for (std::size_t j = 0; j < k; ++j) probs_[n * k + j] = std::exp(z[j] - log_sum);
    total += log_sum - z[labels_[n]];
  }
  const T loss = total / static_cast<T>(batch_);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at softmax head");
  return loss;
}

template <typename T>
void Network<T>::backward(T loss_scale) {
  if (batch_ == 0) throw StateError("backward() called before forward()");
  const std::size_t k = spec_.num_classes;
  Tensor<T> g(Shape4{batch_, k, 1, 1});
  const T scale = loss_scale / static_cast<T>(batch_);
  for (std::size_t n = 0; n < batch_; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      const T onehot = static_cast<std::size_t>(labels_[n]) == j ? T(1) : T(0);
      g(n, j, 0, 0) = scale * (probs_[n * k + j] - onehot);
    }
  }
  for (std::size_t ii = layer_count(); ii-- > 0;) {
    const Shape3& in = in_shapes_[ii];
    const Shape3& out = out_shapes_[ii];
    const bool need_input_grad = ii > 0;
    LayerCache& cache = cache_[ii];
    Tensor<T> dx;
    std::visit(
        Overloaded{
            [&](const ConvSpec& c) {
              const std::size_t positions = out.h * out.w;
              const std::size_t bp = batch_ * positions;
              Matrix<T> dy(out.c, bp);
              for (std::size_t n = 0; n < batch_; ++n)
                for (std::size_t f = 0; f < out.c; ++f)
                  std::copy_n(&g(n, f, 0, 0), positions, &dy(f, n * positions));
              const Matrix<T>& cols = cache.cols;
              auto& gw = grads_[ii].weight;
              gemm(Transpose::kNo, Transpose::kYes, out.c, cols.rows, bp, T(1), dy.data.data(),
                   bp, cols.data.data(), bp, T(0), gw.data(), cols.rows);
              for (std::size_t f = 0; f < out.c; ++f) {
                T s = T(0);
                for (std::size_t j = 0; j < bp; ++j) s += dy(f, j);
                grads_[ii].bias[f] = s;
              }
              if (need_input_grad) {
                Matrix<T> dcols(cols.rows, bp);
                gemm(Transpose::kYes, Transpose::kNo, cols.rows, bp, out.c, T(1),
                     params_[ii].weight.data(), cols.rows, dy.data.data(), bp, T(0),
                     dcols.data.data(), bp);
                std::optional<std::span<const std::size_t>> rows;
                if (c.kept_columns) rows = std::span<const std::size_t>(*c.kept_columns);
                dx = col2im(dcols, geometry_for(c, in), batch_, rows);
              }
            },
            [&](const FcSpec&) {
              const std::size_t in_features = in.count();
              const Tensor<T>& x = cache.input;
              gemm(Transpose::kYes, Transpose::kNo, out.c, in_features, batch_, T(1), g.data(),
                   out.c, x.data(), in_features, T(0), grads_[ii].weight.data(), in_features);
              for (std::size_t o = 0; o < out.c; ++o) {
                T s = T(0);
                for (std::size_t n = 0; n < batch_; ++n) s += g(n, o, 0, 0);
                grads_[ii].bias[o] = s;
              }
              if (need_input_grad) {
                dx = Tensor<T>(Shape4{batch_, in.c, in.h, in.w});
                gemm(Transpose::kNo, Transpose::kNo, batch_, in_features, out.c, T(1), g.data(),
                     out.c, params_[ii].weight.data(), in_features, T(0), dx.data(),
                     in_features);
              }
            },
            [&](const ReluSpec&) {
              dx = Tensor<T>(Shape4{batch_, in.c, in.h, in.w});
              auto src = cache.input.values();
              auto gv = g.values();
              auto dv = dx.values();
              for (std::size_t j = 0; j < dv.size(); ++j) dv[j] = src[j] > T(0) ? gv[j] : T(0);
            },
            [&](const MaxPoolSpec&) {
              dx = Tensor<T>(Shape4{batch_, in.c, in.h, in.w});
              auto gv = g.values();
              for (std::size_t o = 0; o < gv.size(); ++o) dx.storage()[cache.argmax[o]] += gv[o];
            }},
        spec_.layers[ii]);
    if (is_conv(spec_.layers[ii]) || is_fc(spec_.layers[ii])) {
      if (!all_finite<T>(grads_[ii].weight.values())) {
        throw NumericError("non-finite gradients at layer " + spec_.layer_name(ii));
      }
    }
    if (!need_input_grad) break;
    g = std::move(dx);
  }
}

template <typename T>
std::uint64_t Network<T>::activation_signature() const {
  return signature_;
}

template class Network<float>;
template class Network<double>;

}  // namespace increg
