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

#include "cwhawq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

namespace {

constexpr double kMinPactAlpha = 1e-6;

}  // namespace

double sgd_step(Model& model, const Batch& batch, double lr) {
  require(lr >= 0.0, "learning rate must be non-negative");
  auto [loss, cache] = forward_loss(model, batch);
  if (!std::isfinite(loss)) fail(ErrorCode::kNumerical, "training loss diverged (non-finite)");
  if (lr == 0.0) return loss;
  const Gradient g = backward(model, cache);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (!model.has_weights(l)) continue;
    auto& p = model.mutable_params(l);
    for (std::size_t k = 0; k < p.weight.size(); ++k) p.weight.data[k] -= lr * g.layers[l].weight.data[k];
    for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias.data[k] -= lr * g.layers[l].bias.data[k];
  }
  if (!g.alpha.empty()) {
    auto& q = model.mutable_quant();
    for (const auto& [layer, ga] : g.alpha) {
      auto& alpha = q.activations.at(layer).alpha;
      for (std::size_t c = 0; c < alpha.size(); ++c) alpha[c] = std::max(kMinPactAlpha, alpha[c] - lr * ga[c]);
    }
  }
  return loss;
}

double train_epoch(Model& model, const Dataset& data, const TrainOptions& opts) {
  require(data.train_size() > 0, "cannot train on an empty dataset");
  require(opts.batch_size > 0, "batch size must be positive");
  std::vector<std::size_t> order(data.train_size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = substream(opts.seed, "shuffle");
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t begin = 0; begin < order.size(); begin += opts.batch_size) {
    const std::size_t count = std::min(opts.batch_size, order.size() - begin);
    const Batch b = data.train_batch(std::span<const std::size_t>(order.data() + begin, count));
    sgd_step(model, b, opts.lr);
  }
  return evaluate(model, data);
}

double evaluate(const Model& model, const Dataset& data, std::size_t batch_size) {
  require(data.eval_size() > 0, "cannot evaluate on an empty split");
  const std::size_t K = model.output_size();
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.eval_size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.eval_size() - begin);
    const Batch b = data.eval_range(begin, count);
    const ForwardCache c = forward(model, b.inputs);
    const auto out = c.output();
    for (std::size_t n = 0; n < count; ++n) {
      const auto* row = out.data() + n * K;
      const auto pred = static_cast<int>(std::max_element(row, row + K) - row);
      if (pred == b.labels[n]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.eval_size());
}

double evaluate_loss(const Model& model, const Dataset& data, std::size_t batch_size) {
  require(data.eval_size() > 0, "cannot evaluate on an empty split");
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.eval_size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, data.eval_size() - begin);
    total += forward_loss(model, data.eval_range(begin, count)).loss * static_cast<double>(count);
  }
  return total / static_cast<double>(data.eval_size());
}

}  // namespace cwhawq
