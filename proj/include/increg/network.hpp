// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "increg/im2col.hpp"
#include "increg/tensor.hpp"

namespace increg {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  /// Kept patch rows (im2col weight columns) of a column-compacted layer.
  /// When set, the weight tensor is stored as N×kept×1×1.
  std::optional<std::vector<std::size_t>> kept_columns;

  bool operator==(const ConvSpec&) const = default;
};

struct FcSpec {
  std::size_t out_features = 0;
  bool operator==(const FcSpec&) const = default;
};

struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};

struct MaxPoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  bool operator==(const MaxPoolSpec&) const = default;
};

using LayerSpec = std::variant<ConvSpec, FcSpec, ReluSpec, MaxPoolSpec>;

/// Shape of one sample flowing between layers.
struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t count() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
};

/// Ordered layer stack ending in a softmax-cross-entropy head.
struct NetworkSpec {
  Shape3 input;
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;
  /// One pruning ratio per conv layer, in layer order.
  std::vector<double> prune_ratios;

  /// Throws ShapeError naming the first layer whose shapes do not compose,
  /// or ConfigError for a bad pruning ratio.
  void validate() const;
  /// Output shape of each layer, given `input`.
  std::vector<Shape3> output_shapes() const;
  /// Input shape of each layer.
  std::vector<Shape3> input_shapes() const;
  std::vector<std::size_t> conv_layers() const;
  std::vector<std::size_t> param_layers() const;
  /// "conv1", "relu2", "fc1", ... (1-based per layer kind).
  std::string layer_name(std::size_t index) const;
  /// Multiply-adds of each conv layer for one sample.
  std::vector<double> conv_flops() const;

  bool operator==(const NetworkSpec&) const = default;
};

bool is_conv(const LayerSpec& l);
bool is_fc(const LayerSpec& l);

/// Weights and bias of one parameterised layer. Conv weights are N×C×kh×kw;
/// fc weights are out×in×1×1.
template <typename T>
struct ParamBlock {
  Tensor<T> weight;
  std::vector<T> bias;
};

/// Deterministic CNN with hand-derived backprop per layer type.
template <typename T>
class Network {
 public:
  /// He-uniform weights, zero biases.
  Network(NetworkSpec spec, std::uint64_t seed);
  /// Adopts the given parameters; blocks for non-parameter layers are empty.
  Network(NetworkSpec spec, std::vector<ParamBlock<T>> params);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t layer_count() const { return spec_.layers.size(); }

  /// Runs the network and returns mean softmax-cross-entropy loss.
  /// Throws NumericError naming the first layer that produced NaN/Inf.
  T forward(const Tensor<T>& input, std::span<const int> labels);
  /// Logits only (B×K×1×1); caches nothing needed for backward.
  Tensor<T> predict(const Tensor<T>& input);
  /// Logits of the last forward().
  const Tensor<T>& logits() const { return logits_; }

  /// Gradients of the prediction loss (times `loss_scale`) for the last
  /// forward(). Overwrites previous gradients.
  void backward(T loss_scale = T(1));

  ParamBlock<T>& params(std::size_t layer) { return params_.at(layer); }
  const ParamBlock<T>& params(std::size_t layer) const { return params_.at(layer); }
  const ParamBlock<T>& grads(std::size_t layer) const { return grads_.at(layer); }
  ParamBlock<T>& grads(std::size_t layer) { return grads_.at(layer); }

  std::size_t parameter_count() const;
  /// Hash of ReLU on/off pattern and max-pool argmaxes from the last forward.
  std::uint64_t activation_signature() const;

  /// Copy with parameters converted to another scalar type.
  template <typename U>
  Network<U> cast() const {
    std::vector<ParamBlock<U>> converted(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = params_[i];
      converted[i].weight = Tensor<U>(
          src.weight.shape(),
          std::vector<U>(src.weight.storage().begin(), src.weight.storage().end()));
      converted[i].bias.assign(src.bias.begin(), src.bias.end());
    }
    return Network<U>(spec_, std::move(converted));
  }

 private:
  struct LayerCache {
    Matrix<T> cols;                     // conv: patch matrix
    Tensor<T> input;                    // fc / relu: layer input
    std::vector<std::uint32_t> argmax;  // maxpool: flat input index per output
  };

  Tensor<T> run(const Tensor<T>& input, bool keep_cache);
  void check_params() const;

  NetworkSpec spec_;
  std::vector<Shape3> in_shapes_;
  std::vector<Shape3> out_shapes_;
  std::vector<ParamBlock<T>> params_;
  std::vector<ParamBlock<T>> grads_;
  std::vector<LayerCache> cache_;
  std::size_t batch_ = 0;
  Tensor<T> logits_;
  std::vector<T> probs_;
  std::vector<int> labels_;
  std::uint64_t signature_ = 0;
};

/// Expected weight shape of a parameterised layer.
Shape4 weight_shape(const NetworkSpec& spec, std::size_t layer);

}  // namespace increg
