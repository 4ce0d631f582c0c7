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

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cwhawq/hessian_trace.hpp"

namespace cwhawq {

inline constexpr std::size_t kSteps = 6;  ///< bits 2..7; the remainder gets 8

struct SortedEntry {
  std::size_t layer = 0;
  std::size_t channel = 0;
  double average = 0.0;
  std::uint64_t elements = 0;
};

/// Channels in descending average trace; ties by (layer, channel) ascending.
struct SortedChannelList {
  TraceTarget target = TraceTarget::kWeights;
  std::vector<SortedEntry> entries;
  std::vector<std::uint64_t> cumulative;  ///< cumulative[i] = elements of entries[0..i]
  std::uint64_t total = 0;

  std::size_t size() const noexcept { return entries.size(); }
  /// Elements in entries [0, i).
  std::uint64_t prefix(std::size_t i) const { return i == 0 ? 0 : cumulative[i - 1]; }
};

SortedChannelList sort_channels(const TraceReport& report);

struct ChannelBits {
  std::size_t layer = 0;
  std::size_t channel = 0;
  int bits = 8;
  std::uint64_t elements = 0;

  bool operator==(const ChannelBits&) const = default;
};

struct CompressionStats {
  double avg_bits = 0.0;
  double compression = 0.0;
  std::uint64_t size_bits = 0;
};

struct QuantPolicy {
  TraceTarget target = TraceTarget::kWeights;
  std::array<double, kSteps> actions{};  ///< proposed
  std::array<double, kSteps> ratios{};   ///< after clamping; fractions of the remainder
  std::vector<ChannelBits> assignment;   ///< in sorted order
  double avg_bits = 0.0;
  double compression = 0.0;
  std::uint64_t size_bits = 0;
  std::optional<std::uint64_t> budget_bits;

  std::map<std::pair<std::size_t, std::size_t>, int> bits_by_channel() const;
  /// Element-weighted mean bits per layer.
  std::map<std::size_t, double> layer_average_bits() const;
  /// Element counts per bit width 2..8.
  std::map<int, std::uint64_t> elements_per_bits() const;
};

CompressionStats compression_stats(const QuantPolicy& policy);
CompressionStats compression_stats(const std::vector<ChannelBits>& assignment);

std::string to_json(const QuantPolicy& policy);
QuantPolicy policy_from_json(const std::string& text);
/// Throws kBudgetInfeasible when the policy's size exceeds its budget, and
/// kDataFormat on inconsistent statistics.
void validate_policy(const QuantPolicy& policy);

/// Size budgets in bits; a relative slack of 1e-9 absorbs decimal round-off
/// in the target (e.g. 32/3).
std::uint64_t budget_from_wcomp(std::uint64_t elements, double wcomp);
std::uint64_t budget_from_avg_bits(std::uint64_t elements, double avg_bits);

/// Result of one allocation step.
struct StepResult {
  int bits = 2;
  double proposed = 0.0;
  double clamped = 0.0;
  std::size_t begin = 0;  ///< segment [begin, end) in sorted order
  std::size_t end = 0;
};

/// Sequential allocation along a SortedChannelList. Remaining channels are
/// always the prefix [0, remaining_end()); each step takes a tail segment.
class Allocator {
 public:
  explicit Allocator(const SortedChannelList& sorted, std::optional<std::uint64_t> budget_bits = std::nullopt);

  int current_bits() const noexcept { return bits_; }
  std::size_t step_index() const noexcept { return static_cast<std::size_t>(bits_ - 2); }
  bool done() const noexcept { return bits_ > 7; }
  std::size_t remaining_end() const noexcept { return end_; }
  std::uint64_t remaining_elements() const { return sorted_->prefix(end_); }
  std::uint64_t assigned_size() const noexcept { return assigned_size_; }
  const SortedChannelList& sorted() const noexcept { return *sorted_; }
  std::optional<std::uint64_t> budget() const noexcept { return budget_; }

  /// Smallest increase of `a` that keeps the final size within budget.
  double clamp(double a) const;
  /// Boundary index of the tail segment nearest to fraction a of the
  /// remainder; ties go to the larger segment.
  std::size_t snap(double a) const;
  StepResult step(double a);
  /// Assigns 8 bits to the remainder. Requires done().
  QuantPolicy finish() const;

 private:
  std::uint64_t min_final_size(std::size_t boundary) const;

  const SortedChannelList* sorted_;
  std::optional<std::uint64_t> budget_;
  int bits_ = 2;
  std::size_t end_ = 0;
  std::uint64_t assigned_size_ = 0;
  std::vector<int> bits_of_;  // per sorted entry; 0 = unassigned
  std::array<double, kSteps> proposed_{};
  std::array<double, kSteps> clamped_{};
};

double clamp_action(const Allocator& state, double a);

/// Applies six actions; with a budget each is clamped first.
QuantPolicy ratios_to_assignment(const SortedChannelList& sorted, const std::array<double, kSteps>& actions,
                                 std::optional<std::uint64_t> budget_bits = std::nullopt);

/// Every channel at `bits`.
QuantPolicy uniform_policy(const SortedChannelList& sorted, int bits);

}  // namespace cwhawq
