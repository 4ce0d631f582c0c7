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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cwhawq/data.hpp"
#include "cwhawq/model.hpp"

namespace cwhawq {

enum class TraceTarget { kWeights, kActivations };
enum class Granularity { kLayer, kChannel };

std::string to_string(TraceTarget t);
std::string to_string(Granularity g);
TraceTarget parse_target(const std::string& s);
Granularity parse_granularity(const std::string& s);

struct ProbeConfig {
  std::size_t m = 32;           ///< weight probes
  std::size_t n = 32;           ///< activation probes (one fresh batch each)
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;  ///< samples per Hessian batch
};

/// Flat indices of one channel, relative to its block.
struct ChannelMask {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::vector<std::size_t> indices;
};

/// Contiguous range of an operator's domain belonging to one layer.
struct TraceBlock {
  std::size_t layer = 0;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<ChannelMask> channels;
};

struct TraceEntry {
  std::size_t layer = 0;
  std::optional<std::size_t> channel;
  double raw = 0.0;
  std::size_t elements = 0;
  double average = 0.0;

  bool operator==(const TraceEntry&) const = default;
};

struct TraceReport {
  TraceTarget target = TraceTarget::kWeights;
  Granularity granularity = Granularity::kChannel;
  ProbeConfig probes;
  std::vector<TraceEntry> entries;

  /// Entries of one layer, in channel order.
  std::vector<TraceEntry> layer_entries(std::size_t layer) const;
};

std::string to_json(const TraceReport& report);
TraceReport trace_report_from_json(const std::string& text);

/// Symmetric linear operator on R^dim.
using LinearOperator = std::function<std::vector<double>(std::span<const double>)>;

/// Weight masks over the weight tensor of `layer` (bias excluded).
std::vector<ChannelMask> weight_channel_masks(const Model& model, std::size_t layer);
/// Per-sample activation masks of layer `site`.
std::vector<ChannelMask> activation_channel_masks(const Model& model, std::size_t site);

/// Hutchinson on a fixed operator. Probe i is a Rademacher vector over the
/// whole domain drawn from substream(seed, stream, i); channel estimates of a
/// block reuse that probe under their masks.
std::vector<TraceEntry> hutchinson(const LinearOperator& op, std::size_t dim, std::span<const TraceBlock> blocks,
                                   Granularity granularity, std::size_t probes, std::uint64_t seed,
                                   const std::string& stream = "probe");

/// Running Hutchinson estimate of one block at each checkpoint.
std::vector<double> hutchinson_convergence(const LinearOperator& op, std::size_t dim, const TraceBlock& block,
                                           std::span<const std::size_t> checkpoints, std::uint64_t seed,
                                           const std::string& stream = "probe");

/// Weight blocks use a fixed Hessian batch: the first cfg.batch_size training
/// samples. Activation probe i uses training samples starting at i*batch_size
/// (wrapping). Activation sites default to the ReLU layers.
TraceReport estimate_traces(const Model& model, const Dataset& data, TraceTarget target, Granularity granularity,
                            const ProbeConfig& cfg, std::optional<std::vector<std::size_t>> sites = std::nullopt);

/// Layer-granularity running estimates for `layer` after each checkpoint.
std::vector<double> trace_convergence(const Model& model, const Dataset& data, TraceTarget target,
                                      std::size_t layer, const ProbeConfig& cfg,
                                      std::span<const std::size_t> checkpoints);

/// Batch used for weight Hessians.
Batch weight_hessian_batch(const Dataset& data, std::size_t batch_size);
/// Batch used for activation probe i.
Batch activation_probe_batch(const Dataset& data, std::size_t batch_size, std::size_t probe);

}  // namespace cwhawq
