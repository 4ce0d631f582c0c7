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

#include "cwhawq/search.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

SearchEnv::SearchEnv(const SortedChannelList& sorted, std::uint64_t budget_bits)
    : sorted_(&sorted), budget_(budget_bits) {
  Allocator probe(sorted, budget_bits);  // validates feasibility
  (void)probe;
}

Observation SearchEnv::observe(std::size_t k, double a_prev, std::size_t s, std::size_t e) const {
  const double n = static_cast<double>(sorted_->size());
  const double rem = static_cast<double>(alloc_->remaining_elements()) / static_cast<double>(sorted_->total);
  return {std::min(1.0, static_cast<double>(k) / 5.0), rem, static_cast<double>(s) / n, static_cast<double>(e) / n,
          a_prev};
}

Observation SearchEnv::reset() {
  alloc_.emplace(*sorted_, budget_);
  obs_ = observe(0, 0.0, 0, 0);
  return obs_;
}

SearchEnv::Outcome SearchEnv::step(double action) {
  require(alloc_.has_value(), "environment used before reset");
  require(!alloc_->done(), "episode already terminated");
  Outcome out;
  out.step = alloc_->step(action);
  out.terminal = alloc_->done();
  out.next = observe(alloc_->step_index(), out.step.clamped, out.step.begin, out.step.end);
  obs_ = out.next;
  return out;
}

QuantPolicy SearchEnv::policy() const {
  require(alloc_.has_value() && alloc_->done(), "episode is not finished");
  return alloc_->finish();
}

std::string to_json_line(const EpisodeRecord& r) {
  const nlohmann::json j = {{"episode", r.episode},         {"actions", r.actions}, {"clamped", r.clamped},
                            {"avg_bits", r.avg_bits},       {"compression", r.compression},
                            {"reward", r.reward},           {"sigma", r.sigma}};
  return j.dump();
}

std::string search_log_jsonl(const SearchResult& result) {
  std::ostringstream os;
  for (const auto& r : result.log) os << to_json_line(r) << '\n';
  return os.str();
}

SearchResult run_search(const SortedChannelList& sorted, std::uint64_t budget_bits, const RewardFn& reward,
                        const SearchOptions& opts) {
  require(opts.episodes > 0, "episode count must be positive", ErrorCode::kConfig);
  SearchEnv env(sorted, budget_bits);
  Agent agent(opts.ddpg, opts.seed);
  ReplayBuffer buffer(opts.ddpg.buffer_capacity);
  const NoiseSchedule schedule = NoiseSchedule::scaled(opts.episodes);
  auto noise_rng = substream(opts.seed, "exploration");
  auto replay_rng = substream(opts.seed, "replay");
  std::map<std::vector<int>, double> cache;

  SearchResult result;
  bool have_best = false;
  for (std::size_t ep = 0; ep < opts.episodes; ++ep) {
    const double sigma = schedule.sigma(ep);
    Observation obs = env.reset();
    std::vector<Transition> episode;
    EpisodeRecord rec;
    rec.episode = ep;
    rec.sigma = sigma;
    for (std::size_t k = 0; k < kSteps; ++k) {
      const double a = agent.act(obs, sigma, noise_rng);
      const SearchEnv::Outcome o = env.step(a);
      rec.actions[k] = a;
      rec.clamped[k] = o.step.clamped;
      episode.push_back({obs, o.step.clamped, 0.0, o.next, o.terminal});
      obs = o.next;
    }
    QuantPolicy policy = env.policy();
    std::vector<int> key;
    key.reserve(policy.assignment.size());
    for (const auto& c : policy.assignment) key.push_back(c.bits);
    double r = 0.0;
    auto hit = opts.cache_rewards ? cache.find(key) : cache.end();
    if (hit != cache.end()) {
      r = hit->second;
    } else {
      r = reward(policy);
      require(std::isfinite(r), "reward is not finite", ErrorCode::kNumerical);
      ++result.reward_evaluations;
      if (opts.cache_rewards) cache.emplace(std::move(key), r);
    }
    episode.back().reward = r;
    rec.avg_bits = policy.avg_bits;
    rec.compression = policy.compression;
    rec.reward = r;
    result.log.push_back(rec);
    if (!have_best || r > result.best_reward) {
      have_best = true;
      result.best = policy;
      result.best_reward = r;
      result.best_episode = ep;
    }
    for (const auto& t : episode) {
      buffer.push(t);
      result.transitions.push_back(t);
      if (agent.update(buffer, replay_rng).performed) ++result.updates;
    }
  }
  return result;
}

}  // namespace cwhawq
