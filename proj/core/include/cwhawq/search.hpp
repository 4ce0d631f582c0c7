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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cwhawq/bit_alloc.hpp"
#include "cwhawq/ddpg.hpp"

namespace cwhawq {

/// Episodic environment over the six bit-ratio actions.
class SearchEnv {
 public:
  SearchEnv(const SortedChannelList& sorted, std::uint64_t budget_bits);

  Observation reset();
  struct Outcome {
    Observation next{};
    bool terminal = false;
    StepResult step;
  };
  Outcome step(double action);
  /// Completed policy; requires a terminal step.
  QuantPolicy policy() const;
  const Observation& observation() const noexcept { return obs_; }

 private:
  Observation observe(std::size_t k, double a_prev, std::size_t s, std::size_t e) const;

  const SortedChannelList* sorted_;
  std::uint64_t budget_;
  std::optional<Allocator> alloc_;
  Observation obs_{};
};

struct EpisodeRecord {
  std::size_t episode = 0;
  std::array<double, kSteps> actions{};
  std::array<double, kSteps> clamped{};
  double avg_bits = 0.0;
  double compression = 0.0;
  double reward = 0.0;
  double sigma = 0.0;
};

std::string to_json_line(const EpisodeRecord& r);

/// Terminal reward of a complete policy.
using RewardFn = std::function<double(const QuantPolicy&)>;

struct SearchOptions {
  std::size_t episodes = 120;
  std::uint64_t seed = 0;
  DdpgConfig ddpg;
  /// Identical policies get the cached reward instead of a new evaluation.
  bool cache_rewards = true;
};

struct SearchResult {
  QuantPolicy best;
  double best_reward = 0.0;
  std::size_t best_episode = 0;
  std::vector<EpisodeRecord> log;
  std::vector<Transition> transitions;
  std::size_t reward_evaluations = 0;
  std::size_t updates = 0;
};

SearchResult run_search(const SortedChannelList& sorted, std::uint64_t budget_bits, const RewardFn& reward,
                        const SearchOptions& opts);

std::string search_log_jsonl(const SearchResult& result);

}  // namespace cwhawq
