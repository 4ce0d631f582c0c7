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

#include "cwhawq/hessian_trace.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "cwhawq/engine.hpp"
#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

using json = nlohmann::json;

std::string to_string(TraceTarget t) { return t == TraceTarget::kWeights ? "weights" : "activations"; }
std::string to_string(Granularity g) { return g == Granularity::kLayer ? "layer" : "channel"; }

TraceTarget parse_target(const std::string& s) {
  if (s == "weights") return TraceTarget::kWeights;
  if (s == "activations") return TraceTarget::kActivations;
  fail(ErrorCode::kConfig, "unknown trace target '" + s + "' (expected weights|activations)");
}

Granularity parse_granularity(const std::string& s) {
  if (s == "layer") return Granularity::kLayer;
  if (s == "channel") return Granularity::kChannel;
  fail(ErrorCode::kConfig, "unknown granularity '" + s + "' (expected layer|channel)");
}

std::vector<TraceEntry> TraceReport::layer_entries(std::size_t layer) const {
  std::vector<TraceEntry> out;
  for (const auto& e : entries)
    if (e.layer == layer) out.push_back(e);
  return out;
}

std::string to_json(const TraceReport& report) {
  json entries = json::array();
  for (const auto& e : report.entries) {
    entries.push_back({{"layer", e.layer},
                       {"channel", e.channel ? json(*e.channel) : json(nullptr)},
                       {"raw", e.raw},
                       {"elements", e.elements},
                       {"average", e.average}});
  }
  json j = {{"target", to_string(report.target)},
            {"granularity", to_string(report.granularity)},
            {"seed", report.probes.seed},
            {"m", report.probes.m},
            {"n", report.probes.n},
            {"batch_size", report.probes.batch_size},
            {"entries", entries}};
  return j.dump(1);
}

TraceReport trace_report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TraceReport r;
    r.target = parse_target(j.at("target").get<std::string>());
    r.granularity = parse_granularity(j.at("granularity").get<std::string>());
    r.probes.seed = j.at("seed").get<std::uint64_t>();
    r.probes.m = j.at("m").get<std::size_t>();
    r.probes.n = j.value("n", r.probes.n);
    r.probes.batch_size = j.value("batch_size", r.probes.batch_size);
    for (const auto& e : j.at("entries")) {
      TraceEntry t;
      t.layer = e.at("layer").get<std::size_t>();
      if (!e.at("channel").is_null()) t.channel = e.at("channel").get<std::size_t>();
      t.raw = e.at("raw").get<double>();
      t.elements = e.at("elements").get<std::size_t>();
      t.average = e.at("average").get<double>();
      require(t.elements > 0, "trace entry with zero elements", ErrorCode::kDataFormat);
      r.entries.push_back(t);
    }
    return r;
  } catch (const json::exception& ex) {
    fail(ErrorCode::kDataFormat, std::string("malformed trace report: ") + ex.what());
  }
}

std::vector<ChannelMask> weight_channel_masks(const Model& model, std::size_t layer) {
  require(model.has_weights(layer), "layer " + std::to_string(layer) + " has no weights");
  const std::size_t c = model.weight_channels(layer), cs = model.weight_channel_size(layer);
  std::vector<ChannelMask> masks(c);
  for (std::size_t j = 0; j < c; ++j) {
    masks[j].layer = layer;
    masks[j].channel = j;
    masks[j].indices.resize(cs);
    std::iota(masks[j].indices.begin(), masks[j].indices.end(), j * cs);
  }
  return masks;
}

std::vector<ChannelMask> activation_channel_masks(const Model& model, std::size_t site) {
  const std::size_t c = model.activation_channels(site), cs = model.activation_channel_size(site);
  std::vector<ChannelMask> masks(c);
  for (std::size_t j = 0; j < c; ++j) {
    masks[j].layer = site;
    masks[j].channel = j;
    masks[j].indices.resize(cs);
    std::iota(masks[j].indices.begin(), masks[j].indices.end(), j * cs);
  }
  return masks;
}

namespace {

std::vector<double> rademacher(std::uint64_t seed, const std::string& stream, std::size_t index, std::size_t n) {
  auto gen = substream(seed, stream, index);
  std::vector<double> z(n);
  std::uint64_t bits = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % 64 == 0) bits = gen();
    z[k] = (bits >> (k % 64)) & 1U ? 1.0 : -1.0;
  }
  return z;
}

// (z restricted to positions)ᵀ H (z restricted to positions).
double masked_quadratic(const LinearOperator& op, std::span<const double> z, std::vector<double>& v,
                        std::span<const std::size_t> positions) {
  for (std::size_t p : positions) v[p] = z[p];
  const std::vector<double> hv = op(v);
  require(hv.size() == v.size(), "operator returned a vector of the wrong length");
  double q = 0.0;
  for (std::size_t p : positions) q += z[p] * hv[p];
  for (std::size_t p : positions) v[p] = 0.0;
  return q;
}

std::vector<std::size_t> positions_of(const TraceBlock& block, const ChannelMask* mask) {
  std::vector<std::size_t> pos;
  if (mask == nullptr) {
    pos.resize(block.size);
    std::iota(pos.begin(), pos.end(), block.offset);
  } else {
    pos.reserve(mask->indices.size());
    for (std::size_t i : mask->indices) {
      require(i < block.size, "channel mask index outside its block");
      pos.push_back(block.offset + i);
    }
  }
  return pos;
}

struct Slot {
  std::size_t layer;
  std::optional<std::size_t> channel;
  std::size_t elements;
  std::vector<std::size_t> positions;
};

std::vector<Slot> make_slots(std::span<const TraceBlock> blocks, Granularity g, std::size_t dim) {
  std::vector<Slot> slots;
  for (const auto& b : blocks) {
    require(b.offset + b.size <= dim, "trace block exceeds operator dimension");
    if (g == Granularity::kLayer) {
      slots.push_back({b.layer, std::nullopt, b.size, positions_of(b, nullptr)});
    } else {
      require(!b.channels.empty(), "channel granularity needs channel masks");
      for (const auto& m : b.channels)
        slots.push_back({b.layer, m.channel, m.indices.size(), positions_of(b, &m)});
    }
  }
  return slots;
}

std::vector<TraceEntry> finish(const std::vector<Slot>& slots, const std::vector<double>& sums, std::size_t probes) {
  std::vector<TraceEntry> out;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    TraceEntry e;
    e.layer = slots[s].layer;
    e.channel = slots[s].channel;
    e.raw = sums[s] / static_cast<double>(probes);
    e.elements = slots[s].elements;
    e.average = e.raw / static_cast<double>(e.elements);
    out.push_back(e);
  }
  return out;
}

// Per-sample positions of an activation slot replicated across the batch.
std::vector<std::size_t> replicate(std::span<const std::size_t> per_sample, std::size_t sample_size,
                                   std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(per_sample.size() * batch);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t p : per_sample) out.push_back(n * sample_size + p);
  return out;
}

std::vector<TraceBlock> weight_blocks(const Model& model) {
  std::vector<TraceBlock> blocks;
  for (std::size_t l : model.weight_layers())
    blocks.push_back({l, model.weight_offset(l), model.params(l).weight.size(), weight_channel_masks(model, l)});
  return blocks;
}

std::vector<std::size_t> default_sites(const Model& model, std::optional<std::vector<std::size_t>> sites) {
  require(!model.weight_layers().empty(), "activation traces need a model with weight layers");
  std::vector<std::size_t> s = sites ? *sites : model.relu_layers();
  require(!s.empty(), "model has no activation sites");
  for (std::size_t l : s) {
    require(l < model.layer_count(), "activation site " + std::to_string(l) + " out of range");
    require(!std::holds_alternative<Flatten>(model.layers()[l]), "flatten is not an activation site");
  }
  return s;
}

void check_inputs(const Model& model, const Dataset& data) {
  require(data.train_size() > 0, "dataset has no training samples", ErrorCode::kDataFormat);
  require(data.sample_shape == model.input_shape(), "dataset sample shape " + to_string(data.sample_shape) +
                                                         " does not match model input " +
                                                         to_string(model.input_shape()),
          ErrorCode::kDataFormat);
  for (std::size_t l : model.weight_layers())
    require(model.params(l).weight.all_finite() && model.params(l).bias.all_finite(),
            "model parameters are not finite", ErrorCode::kNumerical);
}

std::string activation_stream(std::size_t site) { return "activation-probe/" + std::to_string(site); }

}  // namespace

std::vector<TraceEntry> hutchinson(const LinearOperator& op, std::size_t dim, std::span<const TraceBlock> blocks,
                                   Granularity granularity, std::size_t probes, std::uint64_t seed,
                                   const std::string& stream) {
  require(probes > 0, "probe count must be at least 1");
  const std::vector<Slot> slots = make_slots(blocks, granularity, dim);
  std::vector<double> sums(slots.size(), 0.0), v(dim, 0.0);
  for (std::size_t i = 0; i < probes; ++i) {
    const std::vector<double> z = rademacher(seed, stream, i, dim);
    for (std::size_t s = 0; s < slots.size(); ++s) sums[s] += masked_quadratic(op, z, v, slots[s].positions);
  }
  return finish(slots, sums, probes);
}

std::vector<double> hutchinson_convergence(const LinearOperator& op, std::size_t dim, const TraceBlock& block,
                                           std::span<const std::size_t> checkpoints, std::uint64_t seed,
                                           const std::string& stream) {
  require(!checkpoints.empty(), "checkpoint list is empty");
  require(checkpoints.front() > 0, "checkpoints must be positive");
  require(std::is_sorted(checkpoints.begin(), checkpoints.end()), "checkpoints must be ascending");
  const std::vector<Slot> slots = make_slots(std::span<const TraceBlock>(&block, 1), Granularity::kLayer, dim);
  std::vector<double> out, v(dim, 0.0);
  double sum = 0.0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < checkpoints.back(); ++i) {
    const std::vector<double> z = rademacher(seed, stream, i, dim);
    sum += masked_quadratic(op, z, v, slots[0].positions);
    while (next < checkpoints.size() && checkpoints[next] == i + 1) {
      out.push_back(sum / static_cast<double>(i + 1));
      ++next;
    }
  }
  return out;
}

Batch weight_hessian_batch(const Dataset& data, std::size_t batch_size) {
  require(batch_size > 0, "batch size must be positive");
  return data.train_range(0, std::min(batch_size, data.train_size()));
}

Batch activation_probe_batch(const Dataset& data, std::size_t batch_size, std::size_t probe) {
  require(batch_size > 0, "batch size must be positive");
  const std::size_t n = data.train_size(), b = std::min(batch_size, n);
  std::vector<std::size_t> idx(b);
  for (std::size_t k = 0; k < b; ++k) idx[k] = (probe * b + k) % n;
  return data.train_batch(idx);
}

TraceReport estimate_traces(const Model& model, const Dataset& data, TraceTarget target, Granularity granularity,
                            const ProbeConfig& cfg, std::optional<std::vector<std::size_t>> sites) {
  require(cfg.m > 0, "probe count m must be at least 1");
  require(cfg.n > 0, "probe count N must be at least 1");
  check_inputs(model, data);
  TraceReport report;
  report.target = target;
  report.granularity = granularity;
  report.probes = cfg;

  if (target == TraceTarget::kWeights) {
    require(!model.weight_layers().empty(), "model has no weight layers");
    const HessianVectorProduct h(model, weight_hessian_batch(data, cfg.batch_size));
    const LinearOperator op = [&h](std::span<const double> v) { return h.apply_weights(v); };
    const auto blocks = weight_blocks(model);
    report.entries = hutchinson(op, model.param_count(), blocks, granularity, cfg.m, cfg.seed, "weight-probe");
    return report;
  }

  const std::vector<std::size_t> s = default_sites(model, std::move(sites));
  struct SiteSlots {
    std::size_t site;
    std::vector<Slot> slots;  // per-sample positions
    std::vector<double> sums;
  };
  std::vector<SiteSlots> all;
  for (std::size_t site : s) {
    const std::size_t size = activation_size(model, site);
    TraceBlock block{site, 0, size, activation_channel_masks(model, site)};
    auto slots = make_slots(std::span<const TraceBlock>(&block, 1), granularity, size);
    all.push_back({site, std::move(slots), {}});
    all.back().sums.assign(all.back().slots.size(), 0.0);
  }
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const Batch batch = activation_probe_batch(data, cfg.batch_size, i);
    const HessianVectorProduct h(model, batch);
    for (auto& ss : all) {
      const std::size_t size = activation_size(model, ss.site), dim = size * batch.size();
      const LinearOperator op = [&h, site = ss.site](std::span<const double> v) {
        return h.apply_activations(site, v);
      };
      const std::vector<double> z = rademacher(cfg.seed, activation_stream(ss.site), i, dim);
      std::vector<double> v(dim, 0.0);
      for (std::size_t k = 0; k < ss.slots.size(); ++k)
        ss.sums[k] += masked_quadratic(op, z, v, replicate(ss.slots[k].positions, size, batch.size()));
    }
  }
  for (const auto& ss : all) {
    auto entries = finish(ss.slots, ss.sums, cfg.n);
    report.entries.insert(report.entries.end(), entries.begin(), entries.end());
  }
  return report;
}

std::vector<double> trace_convergence(const Model& model, const Dataset& data, TraceTarget target,
                                      std::size_t layer, const ProbeConfig& cfg,
                                      std::span<const std::size_t> checkpoints) {
  require(!checkpoints.empty(), "checkpoint list is empty");
  require(checkpoints.front() > 0, "checkpoints must be positive");
  require(std::is_sorted(checkpoints.begin(), checkpoints.end()), "checkpoints must be ascending");
  check_inputs(model, data);
  if (target == TraceTarget::kWeights) {
    require(model.has_weights(layer), "layer " + std::to_string(layer) + " has no weights");
    const HessianVectorProduct h(model, weight_hessian_batch(data, cfg.batch_size));
    const LinearOperator op = [&h](std::span<const double> v) { return h.apply_weights(v); };
    const TraceBlock block{layer, model.weight_offset(layer), model.params(layer).weight.size(), {}};
    return hutchinson_convergence(op, model.param_count(), block, checkpoints, cfg.seed, "weight-probe");
  }
  default_sites(model, std::vector<std::size_t>{layer});
  const std::size_t size = activation_size(model, layer);
  std::vector<std::size_t> per(size);
  std::iota(per.begin(), per.end(), 0);
  std::vector<double> out;
  double sum = 0.0;
  std::size_t next = 0;
  for (std::size_t i = 0; i < checkpoints.back(); ++i) {
    const Batch batch = activation_probe_batch(data, cfg.batch_size, i);
    const HessianVectorProduct h(model, batch);
    const LinearOperator op = [&h, layer](std::span<const double> v) { return h.apply_activations(layer, v); };
    const std::size_t dim = size * batch.size();
    const std::vector<double> z = rademacher(cfg.seed, activation_stream(layer), i, dim);
    std::vector<double> v(dim, 0.0);
    sum += masked_quadratic(op, z, v, replicate(per, size, batch.size()));
    while (next < checkpoints.size() && checkpoints[next] == i + 1) {
      out.push_back(sum / static_cast<double>(i + 1));
      ++next;
    }
  }
  return out;
}

}  // namespace cwhawq
