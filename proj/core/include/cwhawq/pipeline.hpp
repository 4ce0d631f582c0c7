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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cwhawq/bit_alloc.hpp"
#include "cwhawq/config.hpp"
#include "cwhawq/data.hpp"
#include "cwhawq/model.hpp"
#include "cwhawq/search.hpp"

namespace cwhawq {

/// Training data plus the held-out reward split.
struct PipelineData {
  Dataset main;    ///< training split and test split
  Dataset reward;  ///< reward_train training samples; eval = held-out validation samples
};

PipelineData load_data(const RunConfig& cfg);

struct BaselineResult {
  Model model;
  double top1 = 0.0;
};

/// Trains cfg.model from its seeded initialization; epochs = 0 returns the
/// initialization.
BaselineResult train_baseline(const RunConfig& cfg, const PipelineData& data);

/// One fine-tuning run used both for search rewards and for final models.
double finetune(Model& model, const Dataset& data, const RunConfig& cfg, std::size_t epochs);

/// Reward: apply `policy` to `base`, fine-tune one epoch on data.reward, and
/// return held-out top-1.
double reward_of(const QuantPolicy& policy, const Model& base, const PipelineData& data, const RunConfig& cfg);

struct PhaseResult {
  TraceReport traces;
  SortedChannelList sorted;
  std::uint64_t budget_bits = 0;
  SearchResult search;
  QuantPolicy policy;
  std::optional<Model> model;  ///< base with the best policy applied and fine-tuned
  double top1 = 0.0;
};

struct UniformResult {
  int weight_bits = 0;
  int activation_bits = 0;
  double top1 = 0.0;
};

struct RunReport {
  std::string model;
  std::string dataset;
  std::uint64_t seed = 0;
  double budget_wcomp = 0.0;
  double budget_abits = 0.0;
  double baseline_top1 = 0.0;
  double phase1_top1 = 0.0;
  double final_top1 = 0.0;
  double avg_w_bits = 0.0;
  double avg_a_bits = 0.0;
  double wcomp = 0.0;
  std::uint64_t weight_size_bits = 0;
  std::uint64_t weight_budget_bits = 0;
  std::uint64_t activation_size_bits = 0;
  std::uint64_t activation_budget_bits = 0;
  std::map<std::size_t, double> layer_w_bits;
  std::map<std::size_t, double> layer_a_bits;
  std::optional<UniformResult> uniform;
};

std::string to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);

struct TwoStepResult {
  PhaseResult activations;
  PhaseResult weights;
  RunReport report;
};

/// Optional progress sink for long runs.
using Progress = std::function<void(const std::string&)>;

/// Activation phase on `baseline`, then weight phase on the fine-tuned
/// phase-1 model. Writes every artifact into cfg.out_dir when `write` is set.
TwoStepResult run_two_step(const RunConfig& cfg, const PipelineData& data, const BaselineResult& baseline,
                           bool write = true, const Progress& progress = {});

/// Uniform a-bits then w-bits under the same fine-tuning protocol.
UniformResult run_uniform(const RunConfig& cfg, const PipelineData& data, const Model& baseline, int weight_bits,
                          int activation_bits);

/// Largest integer bit width within a budget of `avg_bits` per element.
int uniform_bits_within(double avg_bits);

struct LandscapeTable {
  std::size_t layer = 0;
  std::size_t channel = 0;
  double radius = 0.0;
  std::vector<double> coords;               ///< grid along each direction
  std::vector<std::vector<double>> losses;  ///< losses[i][j] at (coords[i], coords[j])
  double center_loss = 0.0;
  /// Mean loss on the outer ring of the grid minus the center loss.
  double ring_increase() const;
};

enum class ChannelSelector { kMinTrace, kMaxTrace, kExplicit };

/// Perturbs one weight channel along two orthonormal random directions.
LandscapeTable loss_landscape(const Model& model, const Dataset& data, const TraceReport& traces,
                              ChannelSelector selector, double radius, std::size_t steps, std::uint64_t seed,
                              std::optional<std::pair<std::size_t, std::size_t>> channel = std::nullopt,
                              std::size_t samples = 1000);

std::string landscape_csv(const LandscapeTable& table);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace cwhawq
