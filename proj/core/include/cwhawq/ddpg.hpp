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
#include <deque>
#include <random>
#include <vector>

#include "cwhawq/model.hpp"

namespace cwhawq {

inline constexpr std::size_t kObsDim = 5;
using Observation = std::array<double, kObsDim>;

struct Transition {
  Observation obs{};
  double action = 0.0;
  double reward = 0.0;
  Observation next{};
  bool terminal = false;
};

/// Bounded FIFO of transitions; at(0) is the oldest.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 600);
  void push(const Transition& t);
  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }
  /// Uniform draws with replacement.
  std::vector<Transition> sample(std::mt19937_64& rng, std::size_t n) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct DdpgConfig {
  std::size_t hidden = 300;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 600;
  double gamma = 1.0;
  double tau = 0.01;
  double final_layer_init = 3e-3;  ///< output layers start in U(-x, x)
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<double>& params, std::span<const double> grad);
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct UpdateResult {
  bool performed = false;
  double critic_loss = 0.0;
  double actor_objective = 0.0;  ///< mean Q(s, mu(s)) before the step
};

/// Actor mu(s) in [0,1] and critic Q(s,a), each with two hidden ReLU layers,
/// plus soft-updated target copies.
class Agent {
 public:
  Agent(const DdpgConfig& cfg, std::uint64_t seed);

  double act(const Observation& obs) const;
  /// act(obs) plus N(0, sigma^2) noise, clipped to [0, 1].
  double act(const Observation& obs, double sigma, std::mt19937_64& rng) const;
  double q_value(const Observation& obs, double action) const;

  /// One critic and one actor step on a minibatch; no-op below batch_size.
  UpdateResult update(const ReplayBuffer& buffer, std::mt19937_64& rng);
  /// Critic-only regression step on the given transitions (targets as in update()).
  double critic_step(const std::vector<Transition>& batch);
  void soft_update(double tau);

  const Model& actor() const noexcept { return actor_; }
  const Model& critic() const noexcept { return critic_; }
  const Model& actor_target() const noexcept { return actor_target_; }
  const Model& critic_target() const noexcept { return critic_target_; }
  Model& mutable_actor() noexcept { return actor_; }
  const DdpgConfig& config() const noexcept { return cfg_; }

 private:
  double actor_step(const std::vector<Transition>& batch);

  DdpgConfig cfg_;
  Model actor_, critic_, actor_target_, critic_target_;
  Adam actor_opt_, critic_opt_;
};

/// Constant sigma for the first `warmup` episodes, then exponential decay
/// reaching `final_sigma` at the last episode.
struct NoiseSchedule {
  std::size_t episodes = 800;
  std::size_t warmup = 100;
  double initial_sigma = 0.5;
  double final_sigma = 0.01;

  /// warmup = episodes / 8, matching the 100-of-800 split.
  static NoiseSchedule scaled(std::size_t episodes);
  double sigma(std::size_t episode) const;
  double decay() const;
};

}  // namespace cwhawq
