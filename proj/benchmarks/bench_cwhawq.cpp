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

#include <benchmark/benchmark.h>

#include <random>

#include "cwhawq/bit_alloc.hpp"
#include "cwhawq/engine.hpp"
#include "cwhawq/model.hpp"
#include "cwhawq/quantizers.hpp"

using namespace cwhawq;

namespace {

Batch image_batch(std::size_t n) {
  std::mt19937_64 rng(0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b{Tensor({n, 1, 28, 28}), std::vector<int>(n)};
  for (auto& x : b.inputs.data) x = u(rng);
  for (std::size_t i = 0; i < n; ++i) b.labels[i] = static_cast<int>(i % 10);
  return b;
}

Model convnet(bool quantized) {
  Model m = make_convnet_s(10);
  m.init_he(0);
  if (quantized) {
    FakeQuant q;
    for (std::size_t l : m.weight_layers()) q.weights[l].bits.assign(m.weight_channels(l), 4);
    for (std::size_t l : m.relu_layers())
      q.activations[l] = {std::vector<int>(m.activation_channels(l), 4),
                          std::vector<double>(m.activation_channels(l), 2.0)};
    q.sawb = default_sawb_coefficients();
    m.set_quant(q);
  }
  return m;
}

void BM_ForwardBackward(benchmark::State& state) {
  const Model m = convnet(state.range(1) != 0);
  const Batch b = image_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto r = forward_loss(m, b);
    benchmark::DoNotOptimize(backward(m, r.cache));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Args({32, 0})->Args({32, 1})->Unit(benchmark::kMillisecond);

void BM_HvpWeights(benchmark::State& state) {
  const Model m = convnet(false);
  const HessianVectorProduct h(m, image_batch(static_cast<std::size_t>(state.range(0))));
  std::vector<double> v(m.param_count(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(h.apply_weights(v));
}
BENCHMARK(BM_HvpWeights)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_HvpActivations(benchmark::State& state) {
  const Model m = convnet(false);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const HessianVectorProduct h(m, image_batch(n), 1);
  std::vector<double> v(h.dimension(), 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(h.apply_activations(1, v));
}
BENCHMARK(BM_HvpActivations)->Arg(32)->Unit(benchmark::kMillisecond);

std::vector<double> gaussian(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 0.1);
  std::vector<double> w(n);
  for (auto& x : w) x = d(rng);
  return w;
}

void BM_QuantizeUniform(benchmark::State& state) {
  const auto w = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(quantize_weights_uniform(w, 4, 0.4));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QuantizeUniform)->Arg(4096);

void BM_QuantizeSawb2(benchmark::State& state) {
  const auto w = gaussian(static_cast<std::size_t>(state.range(0)));
  const auto& c = default_sawb_coefficients();
  for (auto _ : state) benchmark::DoNotOptimize(quantize_weights_sawb2(w, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QuantizeSawb2)->Arg(4096);

void BM_SawbOptimalAlpha(benchmark::State& state) {
  const auto w = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sawb_optimal_alpha(w));
}
BENCHMARK(BM_SawbOptimalAlpha)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_Pact(benchmark::State& state) {
  auto a = gaussian(static_cast<std::size_t>(state.range(0)));
  for (auto& x : a) x = std::abs(x);
  for (auto _ : state) benchmark::DoNotOptimize(pact_quantize(a, 0.2, 4));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Pact)->Arg(4096);

void BM_Allocation(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TraceReport r;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) {
    const double avg = u(rng);
    r.entries.push_back({i / 32, i % 32, avg * 100, 100, avg});
  }
  const auto sorted = sort_channels(r);
  const std::array<double, kSteps> a{0.2, 0.3, 0.1, 0.4, 0.2, 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(ratios_to_assignment(sorted, a, 4 * sorted.total));
}
BENCHMARK(BM_Allocation)->Arg(98)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
