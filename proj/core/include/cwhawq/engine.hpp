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
#include <vector>

#include "cwhawq/model.hpp"
#include "cwhawq/tensor.hpp"

namespace cwhawq {

struct Batch {
  Tensor inputs;            ///< N x sample shape
  std::vector<int> labels;  ///< length N; ignored by the quadratic head

  std::size_t size() const noexcept { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

/// Parameter gradient, shape-congruent with Model params. PACT clip gradients
/// (per ReLU layer, per channel) are carried separately and are not part of
/// the flattened view.
struct Gradient {
  std::vector<LayerParams> layers;
  std::map<std::size_t, std::vector<double>> alpha;

  std::vector<double> flatten() const;
  static Gradient unflatten(const Model& model, std::span<const double> flat);
  static Gradient zeros_like(const Model& model);
};

/// Activation record of one forward pass. Opaque to callers.
class ForwardCache {
 public:
  std::size_t batch_size() const noexcept { return batch_; }
  /// Network output (N x output size).
  std::span<const double> output() const noexcept { return acts_.back(); }
  /// Output of layer i (N x per-sample shape).
  std::span<const double> activation(std::size_t layer) const { return acts_.at(layer + 1); }
  double loss() const noexcept { return loss_; }
  bool has_loss() const noexcept { return has_loss_; }

 private:
  friend struct EngineAccess;
  friend class HessianVectorProduct;
  std::uint64_t model_id_ = 0;
  std::uint64_t model_version_ = 0;
  std::size_t batch_ = 0;
  std::vector<std::vector<double>> acts_;       // acts_[0] input, acts_[i+1] output of layer i
  std::vector<std::vector<double>> eff_w_;      // fake-quantized weights (empty when unquantized)
  std::vector<std::vector<double>> w_pass_;     // STE masks for quantized weights
  std::vector<std::vector<std::uint32_t>> argmax_;  // max-pool routing
  std::vector<double> probs_;                   // softmax probabilities
  std::vector<int> labels_;
  double loss_ = 0.0;
  bool has_loss_ = false;
};

struct LossResult {
  double loss = 0.0;
  ForwardCache cache;
};

/// Forward pass through the layers only (no loss head).
ForwardCache forward(const Model& model, const Tensor& inputs);

/// Forward pass plus loss head.
LossResult forward_loss(const Model& model, const Batch& batch);

/// Exact reverse-mode gradient of the cached loss.
Gradient backward(const Model& model, const ForwardCache& cache);

struct OutputBackward {
  Gradient grad;
  std::vector<double> input_grad;  ///< N x input sample size
};

/// Vector-Jacobian product for an arbitrary upstream gradient on the output.
OutputBackward backward_from_output(const Model& model, const ForwardCache& cache,
                                    std::span<const double> output_grad);

enum class HvpTarget { kWeights, kActivations };

/// Analytic Hessian-vector products of the batch loss, by forward-over-reverse
/// differentiation of the recorded backward pass. The forward pass and the
/// gradient are computed once at construction and reused by every apply().
///
/// Weights target: H is the Hessian with respect to all parameters (flat order
/// of Model::flat_params). Activations target: H is the Hessian with respect to
/// the output values of layer `site` for the whole batch (N x per-sample size).
///
/// The model must outlive this object and must not be mutated meanwhile.
class HessianVectorProduct {
 public:
  /// Default target: weights.
  HessianVectorProduct(const Model& model, const Batch& batch);
  /// Default target: activations of layer `site`.
  HessianVectorProduct(const Model& model, const Batch& batch, std::size_t site);

  HvpTarget target() const noexcept { return target_; }
  std::size_t dimension() const noexcept { return dim_; }
  double loss() const noexcept { return cache_.loss(); }
  const Gradient& gradient() const noexcept { return grad_; }

  /// H v for the default target.
  std::vector<double> apply(std::span<const double> v) const;
  /// H v with respect to all parameters.
  std::vector<double> apply_weights(std::span<const double> v) const;
  /// H v with respect to the output of layer `site` (any non-flatten layer).
  std::vector<double> apply_activations(std::size_t site, std::span<const double> v) const;

 private:
  std::vector<double> apply_impl(bool weights, std::size_t site, std::span<const double> v) const;

  const Model* model_;
  HvpTarget target_;
  std::size_t site_ = 0;
  std::size_t dim_ = 0;
  ForwardCache cache_;
  std::vector<std::vector<double>> out_grads_;  // gradient w.r.t. acts_[i]
  Gradient grad_;
};

/// One-shot convenience wrapper.
std::vector<double> hvp(const Model& model, const Batch& batch, std::span<const double> v, HvpTarget target,
                        std::optional<std::size_t> site = std::nullopt);

/// Per-sample activation element count of layer `site`.
std::size_t activation_size(const Model& model, std::size_t site);

}  // namespace cwhawq
