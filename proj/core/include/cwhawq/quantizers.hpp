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
#include <span>
#include <string>
#include <vector>

namespace cwhawq {

inline constexpr int kMinBits = 2;
inline constexpr int kMaxBits = 8;

/// Rounds to the nearest integer, ties away from zero.
double round_half_away(double x) noexcept;

// ---------------------------------------------------------------------------
// Symmetric uniform weight quantizer (3..8 bits).
//
// 2^bits - 1 levels spanning [-alpha, alpha] with step 2*alpha/(2^bits - 2).
// Zero is always a level, so the grid is symmetric.
// ---------------------------------------------------------------------------

double uniform_step(int bits, double alpha);
double quantize_uniform_value(double w, int bits, double alpha) noexcept;
std::vector<double> quantize_weights_uniform(std::span<const double> w, int bits, double alpha);

// ---------------------------------------------------------------------------
// SAWB 2-bit weight quantizer. Four symmetric levels {-a, -a/3, a/3, a};
// zero is not a level. The clip a* = c1*sqrt(E[w^2]) + c2*E[|w|].
// ---------------------------------------------------------------------------

struct SawbCoefficients {
  double c1 = 0.0;
  double c2 = 0.0;
  // Calibration provenance.
  std::vector<std::string> families;
  std::size_t samples = 0;
  std::size_t elements_per_sample = 0;
  std::uint64_t seed = 0;
};

struct CalibrationSample {
  std::string family;
  std::vector<double> values;
};

/// Value of the 4-level grid with clip alpha nearest to w.
double quantize_sawb2_value(double w, double alpha) noexcept;
double sawb2_mse(std::span<const double> w, double alpha);

/// Clip that minimizes the 4-level quantization MSE of w (grid search plus
/// golden-section refinement).
double sawb_optimal_alpha(std::span<const double> w);

/// alpha* predicted by the coefficients; may be <= 0 for badly fitted coefficients.
double sawb_alpha(std::span<const double> w, const SawbCoefficients& coeffs);

struct Sawb2Result {
  std::vector<double> values;
  double alpha = 0.0;
  bool fallback = false;  ///< true when alpha* <= 0 and max|w| was used instead
};

Sawb2Result quantize_weights_sawb2(std::span<const double> w, const SawbCoefficients& coeffs);

/// Gaussian, Laplace and uniform tensors with log-uniform random scales.
std::vector<CalibrationSample> make_calibration_set(std::uint64_t seed, std::size_t per_family = 40,
                                                    std::size_t elements = 4096);

/// Least-squares fit of (c1, c2) against grid-search optima. Zero-variance
/// samples are rejected; fewer than two usable samples is an error.
SawbCoefficients sawb_calibrate(std::span<const CalibrationSample> samples, std::uint64_t seed = 0);

/// Calibration used by the pipeline when no coefficient file is supplied.
const SawbCoefficients& default_sawb_coefficients();

std::string sawb_to_json(const SawbCoefficients& coeffs);
SawbCoefficients sawb_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// PACT activation quantizer: clip to [0, alpha] then 2^bits uniform levels.
// ---------------------------------------------------------------------------

double pact_step(int bits, double alpha);
double pact_value(double a, double alpha, int bits) noexcept;

struct PactResult {
  std::vector<double> values;
  std::vector<double> grad_input;  ///< dy/da: 1 on (0, alpha), else 0
  std::vector<double> grad_alpha;  ///< dy/dalpha: 1 where a >= alpha, else 0
};

PactResult pact_quantize(std::span<const double> a, double alpha, int bits);

/// Tolerance below zero accepted for post-ReLU inputs.
inline constexpr double kPactNegativeTolerance = 1e-12;

}  // namespace cwhawq
