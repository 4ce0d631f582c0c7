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

#include "cwhawq/apply.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cwhawq/engine.hpp"
#include "cwhawq/error.hpp"

namespace cwhawq {

std::vector<double> pact_alpha_init(const Model& model, std::size_t site, const Dataset& data, std::size_t samples) {
  require(site < model.layer_count() && std::holds_alternative<Relu>(model.layers()[site]),
          "layer " + std::to_string(site) + " is not a ReLU");
  require(data.train_size() > 0, "calibration data is empty", ErrorCode::kDataFormat);
  Model plain = model;
  plain.mutable_quant().activations.clear();
  const Batch batch = data.train_range(0, std::min(samples, data.train_size()));
  const ForwardCache cache = forward(plain, batch.inputs);
  const auto acts = cache.activation(site);
  const std::size_t c = model.activation_channels(site), cs = model.activation_channel_size(site);
  const std::size_t per = c * cs;
  std::vector<double> alpha(c);
  std::vector<double> vals;
  for (std::size_t j = 0; j < c; ++j) {
    vals.clear();
    for (std::size_t n = 0; n < batch.size(); ++n)
      for (std::size_t k = 0; k < cs; ++k) vals.push_back(acts[n * per + j * cs + k]);
    const auto rank = static_cast<std::size_t>(std::ceil(kPactPercentile * static_cast<double>(vals.size())));
    const std::size_t idx = std::min(vals.size() - 1, rank == 0 ? 0 : rank - 1);
    std::nth_element(vals.begin(), vals.begin() + static_cast<long>(idx), vals.end());
    double a = vals[idx];
    if (!(a > 0.0)) a = *std::max_element(vals.begin(), vals.end());
    alpha[j] = a > 0.0 ? a : 1.0;
  }
  return alpha;
}

namespace {

std::string channel_name(std::size_t layer, std::size_t channel) {
  return "(" + std::to_string(layer) + ", " + std::to_string(channel) + ")";
}

std::vector<int> layer_bits(const std::map<std::pair<std::size_t, std::size_t>, int>& bits, std::size_t layer,
                            std::size_t channels, std::set<std::pair<std::size_t, std::size_t>>& used) {
  std::vector<int> out(channels);
  std::vector<std::string> missing;
  for (std::size_t j = 0; j < channels; ++j) {
    auto it = bits.find({layer, j});
    if (it == bits.end()) {
      missing.push_back(channel_name(layer, j));
      continue;
    }
    out[j] = it->second;
    used.insert(it->first);
  }
  if (!missing.empty()) {
    std::string msg = "policy does not assign channel(s)";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorCode::kInvalidArgument, msg);
  }
  return out;
}

}  // namespace

Model apply_policy(const Model& model, const QuantPolicy& policy, const SawbCoefficients& coeffs,
                   const Dataset* calibration, std::size_t calibration_samples) {
  require(!model.weight_layers().empty(), "model has no weight layers to quantize");
  for (const auto& a : policy.assignment)
    require(a.bits >= kMinBits && a.bits <= kMaxBits,
            "channel " + channel_name(a.layer, a.channel) + " has invalid bits " + std::to_string(a.bits));
  const auto bits = policy.bits_by_channel();
  std::set<std::pair<std::size_t, std::size_t>> used;
  FakeQuant q = model.quant();
  q.sawb = coeffs;

  if (policy.target == TraceTarget::kWeights) {
    q.weights.clear();
    for (std::size_t l : model.weight_layers())
      q.weights[l] = WeightQuantizer{layer_bits(bits, l, model.weight_channels(l), used)};
  } else {
    require(calibration != nullptr, "activation policies need calibration data");
    const auto sites = model.relu_layers();
    require(!sites.empty(), "model has no ReLU activations to quantize");
    q.activations.clear();
    for (std::size_t l : sites) {
      ActivationQuantizer aq;
      aq.bits = layer_bits(bits, l, model.activation_channels(l), used);
      aq.alpha = pact_alpha_init(model, l, *calibration, calibration_samples);
      q.activations[l] = std::move(aq);
    }
  }
  for (const auto& a : policy.assignment)
    require(used.count({a.layer, a.channel}) == 1,
            "policy channel " + channel_name(a.layer, a.channel) + " does not exist in the model");

  Model out = model;
  out.set_quant(std::move(q));
  return out;
}

}  // namespace cwhawq
