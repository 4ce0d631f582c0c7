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

#include "cwhawq/ddpg.hpp"

#include <algorithm>
#include <cmath>

#include "cwhawq/engine.hpp"
#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity > 0, "replay buffer capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(t);
}

std::vector<Transition> ReplayBuffer::sample(std::mt19937_64& rng, std::size_t n) const {
  require(!items_.empty(), "cannot sample an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<double>& params, std::span<const double> grad) {
  require(params.size() == grad.size(), "Adam: gradient length mismatch");
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

namespace {

Model make_net(std::size_t in, std::size_t hidden, bool sigmoid) {
  std::vector<Layer> layers{Dense{in, hidden}, Relu{}, Dense{hidden, hidden}, Relu{}, Dense{hidden, 1}};
  if (sigmoid) layers.push_back(Sigmoid{});
  return Model({in}, std::move(layers), std::nullopt);
}

void init_net(Model& net, std::uint64_t seed, const char* name, double final_scale) {
  net.init_he(substream(seed, name)());
  auto gen = substream(seed, std::string(name) + "/final");
  std::uniform_real_distribution<double> u(-final_scale, final_scale);
  auto& last = net.mutable_params(4);
  for (double& w : last.weight.data) w = u(gen);
  for (double& b : last.bias.data) b = u(gen);
}

Tensor obs_tensor(const std::vector<Transition>& batch, bool next) {
  Tensor t({batch.size(), kObsDim});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Observation& o = next ? batch[n].next : batch[n].obs;
    std::copy(o.begin(), o.end(), t.data.begin() + static_cast<long>(n * kObsDim));
  }
  return t;
}

Tensor critic_input(const Tensor& obs, std::span<const double> actions) {
  const std::size_t n = obs.shape[0];
  Tensor t({n, kObsDim + 1});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(obs.data.begin() + static_cast<long>(i * kObsDim),
              obs.data.begin() + static_cast<long>((i + 1) * kObsDim),
              t.data.begin() + static_cast<long>(i * (kObsDim + 1)));
    t.data[i * (kObsDim + 1) + kObsDim] = actions[i];
  }
  return t;
}

void check_obs(const Observation& o) {
  for (double x : o) require(std::isfinite(x), "observation is not finite", ErrorCode::kNumerical);
}

}  // namespace

Agent::Agent(const DdpgConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      actor_(make_net(kObsDim, cfg.hidden, true)),
      critic_(make_net(kObsDim + 1, cfg.hidden, false)),
      actor_target_(actor_),
      critic_target_(critic_),
      actor_opt_(cfg.actor_lr),
      critic_opt_(cfg.critic_lr) {
  require(cfg.hidden > 0 && cfg.batch_size > 0, "agent sizes must be positive");
  require(cfg.tau > 0.0 && cfg.tau <= 1.0, "tau must lie in (0, 1]");
  init_net(actor_, seed, "actor-init", cfg.final_layer_init);
  init_net(critic_, seed, "critic-init", cfg.final_layer_init);
  actor_target_.set_flat_params(actor_.flat_params());
  critic_target_.set_flat_params(critic_.flat_params());
}

double Agent::act(const Observation& obs) const {
  check_obs(obs);
  Tensor x({1, kObsDim}, std::vector<double>(obs.begin(), obs.end()));
  return forward(actor_, x).output()[0];
}

double Agent::act(const Observation& obs, double sigma, std::mt19937_64& rng) const {
  require(sigma >= 0.0, "noise sigma must be non-negative");
  double a = act(obs);
  if (sigma > 0.0) a += std::normal_distribution<double>(0.0, sigma)(rng);
  return std::clamp(a, 0.0, 1.0);
}

double Agent::q_value(const Observation& obs, double action) const {
  check_obs(obs);
  std::vector<double> in(obs.begin(), obs.end());
  in.push_back(action);
  return forward(critic_, Tensor({1, kObsDim + 1}, std::move(in))).output()[0];
}

double Agent::critic_step(const std::vector<Transition>& batch) {
  const std::size_t n = batch.size();
  require(n > 0, "empty critic batch");
  const Tensor next = obs_tensor(batch, true);
  const ForwardCache mu_next = forward(actor_target_, next);
  const ForwardCache q_next = forward(critic_target_, critic_input(next, mu_next.output()));
  std::vector<double> target(n), actions(n);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = batch[i].reward + (batch[i].terminal ? 0.0 : cfg_.gamma * q_next.output()[i]);
    actions[i] = batch[i].action;
  }
  const ForwardCache q = forward(critic_, critic_input(obs_tensor(batch, false), actions));
  std::vector<double> g(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = q.output()[i] - target[i];
    loss += d * d;
    g[i] = 2.0 * d / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);
  require(std::isfinite(loss), "critic loss is not finite", ErrorCode::kNumerical);
  const OutputBackward back = backward_from_output(critic_, q, g);
  std::vector<double> p = critic_.flat_params();
  critic_opt_.step(p, back.grad.flatten());
  critic_.set_flat_params(p);
  return loss;
}

double Agent::actor_step(const std::vector<Transition>& batch) {
  const std::size_t n = batch.size();
  const Tensor obs = obs_tensor(batch, false);
  const ForwardCache mu = forward(actor_, obs);
  const ForwardCache q = forward(critic_, critic_input(obs, mu.output()));
  double objective = 0.0;
  for (double v : q.output()) objective += v;
  objective /= static_cast<double>(n);
  // d(-mean Q)/dQ, pulled back to the action input of the critic.
  const std::vector<double> gq(n, -1.0 / static_cast<double>(n));
  const OutputBackward qb = backward_from_output(critic_, q, gq);
  std::vector<double> ga(n);
  for (std::size_t i = 0; i < n; ++i) ga[i] = qb.input_grad[i * (kObsDim + 1) + kObsDim];
  const OutputBackward ab = backward_from_output(actor_, mu, ga);
  std::vector<double> p = actor_.flat_params();
  actor_opt_.step(p, ab.grad.flatten());
  actor_.set_flat_params(p);
  return objective;
}

UpdateResult Agent::update(const ReplayBuffer& buffer, std::mt19937_64& rng) {
  UpdateResult r;
  if (buffer.size() < cfg_.batch_size) return r;
  const std::vector<Transition> batch = buffer.sample(rng, cfg_.batch_size);
  r.critic_loss = critic_step(batch);
  r.actor_objective = actor_step(batch);
  soft_update(cfg_.tau);
  r.performed = true;
  return r;
}

void Agent::soft_update(double tau) {
  require(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
  auto blend = [tau](Model& target, const Model& online) {
    std::vector<double> t = target.flat_params();
    const std::vector<double> o = online.flat_params();
    if (tau == 1.0) {
      t = o;
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * o[i] + (1.0 - tau) * t[i];
    }
    target.set_flat_params(t);
  };
  blend(actor_target_, actor_);
  blend(critic_target_, critic_);
}

NoiseSchedule NoiseSchedule::scaled(std::size_t episodes) {
  require(episodes > 0, "episode count must be positive", ErrorCode::kConfig);
  NoiseSchedule s;
  s.episodes = episodes;
  s.warmup = episodes / 8;
  return s;
}

double NoiseSchedule::decay() const {
  const std::size_t span = episodes - 1 - warmup;
  if (span == 0) return 1.0;
  return std::pow(final_sigma / initial_sigma, 1.0 / static_cast<double>(span));
}

double NoiseSchedule::sigma(std::size_t episode) const {
  require(episode < episodes, "episode " + std::to_string(episode) + " beyond the schedule of " +
                                  std::to_string(episodes));
  require(warmup < episodes, "warmup must leave at least one decay episode", ErrorCode::kConfig);
  if (episode <= warmup) return initial_sigma;
  if (episode == episodes - 1) return final_sigma;
  return initial_sigma * std::pow(decay(), static_cast<double>(episode - warmup));
}

}  // namespace cwhawq
