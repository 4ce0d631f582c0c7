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

#include <optional>
#include <vector>

#include "cwhawq/bit_alloc.hpp"
#include "cwhawq/data.hpp"
#include "cwhawq/model.hpp"
#include "cwhawq/quantizers.hpp"

namespace cwhawq {

inline constexpr double kPactPercentile = 0.999;

/// Per-channel PACT clip initialization for ReLU layer `site`: the 99.9th
/// percentile of its unquantized outputs over the first `samples` training
/// samples. Channels that never fire fall back to 1.
std::vector<double> pact_alpha_init(const Model& model, std::size_t site, const Dataset& data,
                                    std::size_t samples = 256);

/// Returns a copy of `model` whose `policy.target` quantizers follow the
/// policy; quantizers of the other target are kept. Activation policies need
/// `calibration` for clip initialization.
Model apply_policy(const Model& model, const QuantPolicy& policy, const SawbCoefficients& coeffs,
                   const Dataset* calibration = nullptr, std::size_t calibration_samples = 256);

}  // namespace cwhawq
