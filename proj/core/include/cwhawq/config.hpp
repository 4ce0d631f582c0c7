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
#include <string>

#include "cwhawq/hessian_trace.hpp"

namespace cwhawq {

struct RunConfig {
  // [run]
  std::string model = "convnet-s";
  std::string dataset = "mnist";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  // [data]
  std::filesystem::path mnist_dir = "data/mnist";
  std::size_t train_limit = 30000;  ///< training samples (MNIST)
  std::size_t eval_limit = 10000;   ///< test samples (MNIST)
  std::size_t validation = 1000;    ///< held-out training samples scoring search rewards
  std::size_t synthetic_n = 2000;
  std::size_t synthetic_classes = 10;
  // [train]
  std::size_t epochs = 3;
  double lr = 0.1;
  double lr_decay = 0.5;  ///< per-epoch multiplier
  std::size_t batch_size = 32;
  // [probe]
  ProbeConfig probes{16, 16, 0, 32};
  // [budget]
  double budget_wcomp = 32.0 / 3.0;
  double budget_abits = 4.0;
  // [search]
  std::size_t episodes = 120;
  std::size_t reward_train = 1000;  ///< fine-tuning samples per reward
  double finetune_lr_scale = 0.1;
  std::size_t finetune_epochs = 1;

  double finetune_lr() const { return lr * finetune_lr_scale; }
};

/// Reads a key = value file with [sections]; unknown keys are errors.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const std::string& text);
std::string to_ini(const RunConfig& cfg);
void validate(const RunConfig& cfg);

}  // namespace cwhawq
