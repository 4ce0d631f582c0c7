// Copyright 2026 The cwhawq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cwhawq/quantizers.hpp"
#include "cwhawq/tensor.hpp"

namespace cwhawq {

// Layer descriptors. Convolutions are stride 1 with "same" zero padding and
// odd kernels; max pooling is 2x2 with stride 2 (odd trailing rows/cols dropped).
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  bool bias = true;
  friend bool operator==(const Dense&, const Dense&) = default;
};
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  friend bool operator==(const Conv2d&, const Conv2d&) = default;
};
struct Relu {
  friend bool operator==(const Relu&, const Relu&) = default;
};
struct Sigmoid {
  friend bool operator==(const Sigmoid&, const Sigmoid&) = default;
};
struct MaxPool2x2 {
  friend bool operator==(const MaxPool2x2&, const MaxPool2x2&) = default;
};
struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

using Layer = std::variant<Dense, Conv2d, Relu, Sigmoid, MaxPool2x2, Flatten>;

std::string layer_name(const Layer& layer);

/// Mean softmax cross-entropy over the batch.
struct SoftmaxCrossEntropy {};

/// Mean over the batch of 0.5 * y^T A y, where y is the network output.
/// A fixed quadratic objective with a known Hessian; used to pin estimators.
struct QuadraticHead {
  std::size_t dim = 0;
  std::vector<double> matrix;  ///< dim x dim, row-major, symmetric
};

using LossHead = std::variant<SoftmaxCrossEntropy, QuadraticHead>;

struct LayerParams {
  Tensor weight;  ///< empty for parameter-free layers
  Tensor bias;    ///< empty when absent
};

/// Per-output-channel fake quantization of one weight layer. Bits 3..8 use the
/// symmetric uniform grid clipped at the channel's max |w|; bits 2 use SAWB.
struct WeightQuantizer {
  std::vector<int> bits;
};

/// PACT quantization of one ReLU output, per activation channel.
struct ActivationQuantizer {
  std::vector<int> bits;
  std::vector<double> alpha;
};

struct FakeQuant {
  std::map<std::size_t, WeightQuantizer> weights;          ///< keyed by layer index
  std::map<std::size_t, ActivationQuantizer> activations;  ///< keyed by ReLU layer index
  SawbCoefficients sawb;

  bool empty() const noexcept { return weights.empty() && activations.empty(); }
};

/// Sequential feed-forward network with named (by layer index) parameters.
///
/// Every mutation goes through a non-const accessor, which bumps version();
/// caches record (id, version) so that stale use can be detected. Copies get a
/// fresh id.
class Model {
 public:
  Model(Shape input_shape, std::vector<Layer> layers, std::optional<LossHead> head = SoftmaxCrossEntropy{});
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model() = default;

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::optional<LossHead>& head() const noexcept { return head_; }

  /// Per-sample shape produced by layer i.
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t output_size() const { return numel(shapes_.back()); }

  bool has_weights(std::size_t layer) const;
  std::vector<std::size_t> weight_layers() const;
  /// ReLU layers; their outputs are the quantizable activations.
  std::vector<std::size_t> relu_layers() const;

  // Channel structure of a weight layer: channel = output row / output channel.
  std::size_t weight_channels(std::size_t layer) const;
  std::size_t weight_channel_size(std::size_t layer) const;
  // Channel structure of a layer's output activations (per sample): feature-map
  // channels for 3-D outputs, a single channel otherwise.
  std::size_t activation_channels(std::size_t layer) const;
  std::size_t activation_channel_size(std::size_t layer) const;

  const LayerParams& params(std::size_t layer) const { return params_.at(layer); }
  LayerParams& mutable_params(std::size_t layer);

  std::size_t param_count() const noexcept { return param_count_; }
  std::size_t weight_offset(std::size_t layer) const { return weight_offset_.at(layer); }
  std::size_t bias_offset(std::size_t layer) const { return bias_offset_.at(layer); }
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> flat);

  const FakeQuant& quant() const noexcept { return quant_; }
  FakeQuant& mutable_quant();
  void set_quant(FakeQuant q);

  /// He-normal weights, zero biases.
  void init_he(std::uint64_t seed);

  std::uint64_t id() const noexcept { return id_; }
  std::uint64_t version() const noexcept { return version_; }

  /// Text form of the architecture ("input 1 28 28; conv2d 1 8 3 3; relu; ...").
  std::string descriptor() const;
  static Model from_descriptor(const std::string& text);

  bool same_architecture(const Model& other) const;

 private:
  void validate_and_layout();
  void bump() noexcept { ++version_; }

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::optional<LossHead> head_;
  std::vector<Shape> shapes_;
  std::vector<LayerParams> params_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::size_t param_count_ = 0;
  FakeQuant quant_;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

/// input -> dense 128 -> relu -> dense classes (a flatten is prepended for image inputs).
Model make_mlp_s(const Shape& input_shape, std::size_t classes);
/// conv 1->8 3x3, relu, pool, conv 8->16 3x3, relu, pool, flatten, dense 784->64, relu, dense 64->classes.
Model make_convnet_s(std::size_t classes = 10);
/// "mlp-s" or "convnet-s".
Model make_model(const std::string& name, const Shape& input_shape, std::size_t classes);

}  // namespace cwhawq
