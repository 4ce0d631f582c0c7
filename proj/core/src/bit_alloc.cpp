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

#include "cwhawq/bit_alloc.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "cwhawq/error.hpp"

namespace cwhawq {

using json = nlohmann::json;

SortedChannelList sort_channels(const TraceReport& report) {
  require(report.granularity == Granularity::kChannel, "sorting needs a channel-granularity trace report");
  require(!report.entries.empty(), "trace report has no entries");
  SortedChannelList list;
  list.target = report.target;
  for (const auto& e : report.entries) {
    require(e.channel.has_value(), "channel entry without a channel index", ErrorCode::kDataFormat);
    require(e.elements > 0, "channel with zero elements", ErrorCode::kDataFormat);
    require(std::isfinite(e.average), "non-finite average trace", ErrorCode::kNumerical);
    list.entries.push_back({e.layer, *e.channel, e.average, e.elements});
  }
  std::sort(list.entries.begin(), list.entries.end(), [](const SortedEntry& a, const SortedEntry& b) {
    if (a.average != b.average) return a.average > b.average;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.channel < b.channel;
  });
  for (std::size_t i = 1; i < list.entries.size(); ++i)
    require(list.entries[i].layer != list.entries[i - 1].layer ||
                list.entries[i].channel != list.entries[i - 1].channel,
            "duplicate channel (" + std::to_string(list.entries[i].layer) + ", " +
                std::to_string(list.entries[i].channel) + ") in trace report",
            ErrorCode::kDataFormat);
  std::uint64_t c = 0;
  for (const auto& e : list.entries) list.cumulative.push_back(c += e.elements);
  list.total = c;
  return list;
}

std::map<std::pair<std::size_t, std::size_t>, int> QuantPolicy::bits_by_channel() const {
  std::map<std::pair<std::size_t, std::size_t>, int> out;
  for (const auto& a : assignment) out[{a.layer, a.channel}] = a.bits;
  return out;
}

std::map<std::size_t, double> QuantPolicy::layer_average_bits() const {
  std::map<std::size_t, std::pair<std::uint64_t, std::uint64_t>> acc;
  for (const auto& a : assignment) {
    acc[a.layer].first += static_cast<std::uint64_t>(a.bits) * a.elements;
    acc[a.layer].second += a.elements;
  }
  std::map<std::size_t, double> out;
  for (const auto& [l, p] : acc) out[l] = static_cast<double>(p.first) / static_cast<double>(p.second);
  return out;
}

std::map<int, std::uint64_t> QuantPolicy::elements_per_bits() const {
  std::map<int, std::uint64_t> out;
  for (int b = 2; b <= 8; ++b) out[b] = 0;
  for (const auto& a : assignment) out[a.bits] += a.elements;
  return out;
}

CompressionStats compression_stats(const std::vector<ChannelBits>& assignment) {
  std::uint64_t size = 0, elements = 0;
  for (const auto& a : assignment) {
    size += static_cast<std::uint64_t>(a.bits) * a.elements;
    elements += a.elements;
  }
  CompressionStats s;
  s.size_bits = size;
  if (elements > 0) {
    s.avg_bits = static_cast<double>(size) / static_cast<double>(elements);
    s.compression = 32.0 / s.avg_bits;
  }
  return s;
}

CompressionStats compression_stats(const QuantPolicy& policy) { return compression_stats(policy.assignment); }

namespace {

void fill_stats(QuantPolicy& p) {
  const CompressionStats s = compression_stats(p.assignment);
  p.avg_bits = s.avg_bits;
  p.compression = s.compression;
  p.size_bits = s.size_bits;
}

std::uint64_t budget_from(std::uint64_t elements, double bits_per_element) {
  require(std::isfinite(bits_per_element) && bits_per_element > 0.0, "budget must be positive", ErrorCode::kConfig);
  const double b = static_cast<double>(elements) * bits_per_element * (1.0 + 1e-9);
  return static_cast<std::uint64_t>(std::floor(b));
}

}  // namespace

std::uint64_t budget_from_wcomp(std::uint64_t elements, double wcomp) {
  require(std::isfinite(wcomp) && wcomp > 0.0, "compression target must be positive", ErrorCode::kConfig);
  return budget_from(elements, 32.0 / wcomp);
}

std::uint64_t budget_from_avg_bits(std::uint64_t elements, double avg_bits) { return budget_from(elements, avg_bits); }

std::string to_json(const QuantPolicy& policy) {
  json assignment = json::array();
  for (const auto& a : policy.assignment)
    assignment.push_back({{"layer", a.layer}, {"channel", a.channel}, {"bits", a.bits}, {"elements", a.elements}});
  json j = {{"target", to_string(policy.target)},
            {"actions", policy.actions},
            {"ratios", policy.ratios},
            {"avg_bits", policy.avg_bits},
            {"compression", policy.compression},
            {"size_bits", policy.size_bits},
            {"budget_bits", policy.budget_bits ? json(*policy.budget_bits) : json(nullptr)},
            {"assignment", assignment}};
  return j.dump(1);
}

QuantPolicy policy_from_json(const std::string& text) {
  QuantPolicy p;
  try {
    const json j = json::parse(text);
    p.target = parse_target(j.at("target").get<std::string>());
    p.actions = j.at("actions").get<std::array<double, kSteps>>();
    p.ratios = j.at("ratios").get<std::array<double, kSteps>>();
    if (!j.at("budget_bits").is_null()) p.budget_bits = j.at("budget_bits").get<std::uint64_t>();
    for (const auto& a : j.at("assignment"))
      p.assignment.push_back({a.at("layer").get<std::size_t>(), a.at("channel").get<std::size_t>(),
                              a.at("bits").get<int>(), a.at("elements").get<std::uint64_t>()});
    p.avg_bits = j.at("avg_bits").get<double>();
    p.compression = j.at("compression").get<double>();
    p.size_bits = j.at("size_bits").get<std::uint64_t>();
  } catch (const json::exception& ex) {
    fail(ErrorCode::kDataFormat, std::string("malformed policy: ") + ex.what());
  }
  validate_policy(p);
  return p;
}

void validate_policy(const QuantPolicy& policy) {
  require(!policy.assignment.empty(), "policy has no channels", ErrorCode::kDataFormat);
  for (const auto& a : policy.assignment)
    require(a.bits >= 2 && a.bits <= 8 && a.elements > 0,
            "invalid assignment for channel (" + std::to_string(a.layer) + ", " + std::to_string(a.channel) + ")",
            ErrorCode::kDataFormat);
  require(policy.bits_by_channel().size() == policy.assignment.size(), "policy assigns a channel twice",
          ErrorCode::kDataFormat);
  const CompressionStats s = compression_stats(policy);
  require(s.size_bits == policy.size_bits && s.avg_bits == policy.avg_bits && s.compression == policy.compression,
          "policy statistics do not match its assignment", ErrorCode::kDataFormat);
  if (policy.budget_bits)
    require(policy.size_bits <= *policy.budget_bits,
            "policy size " + std::to_string(policy.size_bits) + " bits exceeds budget " +
                std::to_string(*policy.budget_bits),
            ErrorCode::kBudgetInfeasible);
}

Allocator::Allocator(const SortedChannelList& sorted, std::optional<std::uint64_t> budget_bits)
    : sorted_(&sorted), budget_(budget_bits), end_(sorted.size()), bits_of_(sorted.size(), 0) {
  require(!sorted.entries.empty(), "sorted channel list is empty");
  if (budget_) {
    require(*budget_ > 0, "budget must be positive", ErrorCode::kConfig);
    require(2 * sorted.total <= *budget_,
            "budget unsatisfiable: " + std::to_string(*budget_) + " bits < all-2-bit size " +
                std::to_string(2 * sorted.total),
            ErrorCode::kBudgetInfeasible);
  }
}

std::uint64_t Allocator::min_final_size(std::size_t boundary) const {
  const std::uint64_t rem = sorted_->prefix(boundary);
  const std::uint64_t seg = sorted_->prefix(end_) - rem;
  const auto b = static_cast<std::uint64_t>(bits_);
  return assigned_size_ + b * seg + (b + 1) * rem;
}

std::size_t Allocator::snap(double a) const {
  require(a >= 0.0 && a <= 1.0, "action " + std::to_string(a) + " outside [0, 1]");
  const double remaining = static_cast<double>(remaining_elements());
  const double target = a * remaining;
  std::size_t best = end_;
  double best_dist = target;
  for (std::size_t i = end_; i-- > 0;) {
    const double seg = remaining - static_cast<double>(sorted_->prefix(i));
    const double d = std::abs(seg - target);
    if (d <= best_dist) {
      best = i;
      best_dist = d;
    }
    if (seg > target) break;
  }
  return best;
}

double Allocator::clamp(double a) const {
  require(!done(), "allocation already finished");
  require(a >= 0.0 && a <= 1.0, "action " + std::to_string(a) + " outside [0, 1]");
  if (!budget_ || end_ == 0) return a;
  std::size_t i = snap(a);
  if (min_final_size(i) <= *budget_) return a;
  while (i > 0 && min_final_size(i) > *budget_) --i;
  require(min_final_size(i) <= *budget_, "budget unsatisfiable", ErrorCode::kBudgetInfeasible);
  const std::uint64_t remaining = remaining_elements();
  return static_cast<double>(remaining - sorted_->prefix(i)) / static_cast<double>(remaining);
}

double clamp_action(const Allocator& state, double a) { return state.clamp(a); }

StepResult Allocator::step(double a) {
  const double c = clamp(a);
  StepResult r;
  r.bits = bits_;
  r.proposed = a;
  r.clamped = c;
  r.end = end_;
  r.begin = end_ == 0 ? 0 : snap(c);
  for (std::size_t k = r.begin; k < r.end; ++k) {
    bits_of_[k] = bits_;
    assigned_size_ += static_cast<std::uint64_t>(bits_) * sorted_->entries[k].elements;
  }
  proposed_[step_index()] = a;
  clamped_[step_index()] = c;
  end_ = r.begin;
  ++bits_;
  return r;
}

QuantPolicy Allocator::finish() const {
  require(done(), "allocation has steps left");
  QuantPolicy p;
  p.target = sorted_->target;
  p.actions = proposed_;
  p.ratios = clamped_;
  p.budget_bits = budget_;
  for (std::size_t k = 0; k < sorted_->size(); ++k) {
    const auto& e = sorted_->entries[k];
    p.assignment.push_back({e.layer, e.channel, k < end_ ? 8 : bits_of_[k], e.elements});
  }
  fill_stats(p);
  if (budget_)
    require(p.size_bits <= *budget_, "allocation exceeded its budget", ErrorCode::kBudgetInfeasible);
  return p;
}

QuantPolicy ratios_to_assignment(const SortedChannelList& sorted, const std::array<double, kSteps>& actions,
                                 std::optional<std::uint64_t> budget_bits) {
  for (double a : actions) require(a >= 0.0 && a <= 1.0, "action " + std::to_string(a) + " outside [0, 1]");
  Allocator alloc(sorted, budget_bits);
  for (double a : actions) alloc.step(a);
  return alloc.finish();
}

QuantPolicy uniform_policy(const SortedChannelList& sorted, int bits) {
  require(bits >= 2 && bits <= 8, "bits must be in 2..8");
  QuantPolicy p;
  p.target = sorted.target;
  for (const auto& e : sorted.entries) p.assignment.push_back({e.layer, e.channel, bits, e.elements});
  fill_stats(p);
  return p;
}

}  // namespace cwhawq
