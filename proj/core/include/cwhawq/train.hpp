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

#include "cwhawq/data.hpp"
#include "cwhawq/engine.hpp"
#include "cwhawq/model.hpp"

namespace cwhawq {

struct TrainOptions {
  double lr = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// One plain SGD step on `batch`; PACT clips are updated with the same rate.
/// Returns the loss before the step.
double sgd_step(Model& model, const Batch& batch, double lr);

/// One pass over the training split in a shuffle order derived from
/// opts.seed. Returns top-1 accuracy on the evaluation split afterwards.
double train_epoch(Model& model, const Dataset& data, const TrainOptions& opts);

/// Top-1 accuracy on the evaluation split.
double evaluate(const Model& model, const Dataset& data, std::size_t batch_size = 256);

/// Mean loss over the evaluation split.
double evaluate_loss(const Model& model, const Dataset& data, std::size_t batch_size = 256);

}  // namespace cwhawq
