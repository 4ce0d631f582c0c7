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

#include "cwhawq/quantizers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

double round_half_away(double x) noexcept { return std::round(x); }

namespace {

void check_bits(int bits, int lo, int hi) {
  require(bits >= lo && bits <= hi,
          "bits must be in [" + std::to_string(lo) + "," + std::to_string(hi) + "], got " + std::to_string(bits));
}

double max_abs(std::span<const double> w) {
  double m = 0.0;
  for (double v : w) m = std::max(m, std::abs(v));
  return m;
}

struct Moments {
  double rms = 0.0;       // sqrt(E[w^2])
  double mean_abs = 0.0;  // E[|w|]
};

Moments moments(std::span<const double> w) {
  if (w.empty()) return {};
  double s2 = 0.0, s1 = 0.0;
  for (double v : w) {
    s2 += v * v;
    s1 += std::abs(v);
  }
  const double n = static_cast<double>(w.size());
  return {std::sqrt(s2 / n), s1 / n};
}

}  // namespace

double uniform_step(int bits, double alpha) {
  return 2.0 * alpha / static_cast<double>((1 << bits) - 2);
}

double quantize_uniform_value(double w, int bits, double alpha) noexcept {
  const double step = uniform_step(bits, alpha);
  const double kmax = static_cast<double>((1 << (bits - 1)) - 1);
  const double clipped = std::clamp(w, -alpha, alpha);
  const double k = std::clamp(round_half_away(clipped / step), -kmax, kmax);
  return k * step;
}

std::vector<double> quantize_weights_uniform(std::span<const double> w, int bits, double alpha) {
  check_bits(bits, 3, kMaxBits);
  require(alpha > 0.0 && std::isfinite(alpha), "uniform quantizer clip must be positive");
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = quantize_uniform_value(w[i], bits, alpha);
  return out;
}

double quantize_sawb2_value(double w, double alpha) noexcept {
  const double mag = std::abs(w) >= 2.0 * alpha / 3.0 ? alpha : alpha / 3.0;
  return w < 0.0 ? -mag : mag;
}

double sawb2_mse(std::span<const double> w, double alpha) {
  double s = 0.0;
  for (double v : w) {
    const double d = v - quantize_sawb2_value(v, alpha);
    s += d * d;
  }
  return w.empty() ? 0.0 : s / static_cast<double>(w.size());
}

double sawb_optimal_alpha(std::span<const double> w) {
  const double hi = max_abs(w);
  require(hi > 0.0, "cannot search a clip for an all-zero tensor");
  constexpr int kGrid = 400;
  const double lo = 0.02 * hi;
  const double step = (hi - lo) / kGrid;
  int best = 0;
  double best_mse = sawb2_mse(w, lo);
  for (int i = 1; i <= kGrid; ++i) {
    const double mse = sawb2_mse(w, lo + step * i);
    if (mse < best_mse) {
      best_mse = mse;
      best = i;
    }
  }
  // Golden-section refinement inside the neighbouring grid cells.
  double a = lo + step * std::max(0, best - 1);
  double b = lo + step * std::min(kGrid, best + 1);
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - g * (b - a), x2 = a + g * (b - a);
  double f1 = sawb2_mse(w, x1), f2 = sawb2_mse(w, x2);
  for (int it = 0; it < 60; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - g * (b - a);
      f1 = sawb2_mse(w, x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + g * (b - a);
      f2 = sawb2_mse(w, x2);
    }
  }
  const double refined = 0.5 * (a + b);
  const double grid_alpha = lo + step * best;
  return sawb2_mse(w, refined) <= best_mse ? refined : grid_alpha;
}

double sawb_alpha(std::span<const double> w, const SawbCoefficients& coeffs) {
  const Moments m = moments(w);
  return coeffs.c1 * m.rms + coeffs.c2 * m.mean_abs;
}

Sawb2Result quantize_weights_sawb2(std::span<const double> w, const SawbCoefficients& coeffs) {
  Sawb2Result r;
  r.alpha = sawb_alpha(w, coeffs);
  if (!(r.alpha > 0.0) || !std::isfinite(r.alpha)) {
    r.alpha = max_abs(w);
    r.fallback = true;
  }
  r.values.resize(w.size());
  if (r.alpha == 0.0) return r;  // all-zero slice stays zero
  for (std::size_t i = 0; i < w.size(); ++i) r.values[i] = quantize_sawb2_value(w[i], r.alpha);
  return r;
}

std::vector<CalibrationSample> make_calibration_set(std::uint64_t seed, std::size_t per_family,
                                                    std::size_t elements) {
  auto rng = substream(seed, "sawb-calibration");
  std::uniform_real_distribution<double> log_scale(std::log(0.01), std::log(1.0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::vector<CalibrationSample> out;
  for (const char* family : {"gaussian", "laplace", "uniform"}) {
    for (std::size_t s = 0; s < per_family; ++s) {
      const double scale = std::exp(log_scale(rng));
      CalibrationSample sample{family, std::vector<double>(elements)};
      for (auto& v : sample.values) {
        if (sample.family == "gaussian") {
          v = scale * normal(rng);
        } else if (sample.family == "laplace") {
          v = scale * (expo(rng) - expo(rng));
        } else {
          v = scale * unit(rng);
        }
      }
      out.push_back(std::move(sample));
    }
  }
  return out;
}

SawbCoefficients sawb_calibrate(std::span<const CalibrationSample> samples, std::uint64_t seed) {
  // Normal equations for alpha_opt ~ c1 * rms + c2 * mean_abs (no intercept).
  double s11 = 0, s12 = 0, s22 = 0, t1 = 0, t2 = 0;
  SawbCoefficients out;
  for (const auto& sample : samples) {
    const Moments m = moments(sample.values);
    if (sample.values.size() < 2 || !(m.rms > 0.0)) continue;
    // Zero-variance samples carry no shape information.
    double mean = 0.0;
    for (double v : sample.values) mean += v;
    mean /= static_cast<double>(sample.values.size());
    double centered = 0.0;
    for (double v : sample.values) centered += (v - mean) * (v - mean);
    if (centered <= 1e-24 * m.rms * m.rms * static_cast<double>(sample.values.size())) continue;

    const double target = sawb_optimal_alpha(sample.values);
    s11 += m.rms * m.rms;
    s12 += m.rms * m.mean_abs;
    s22 += m.mean_abs * m.mean_abs;
    t1 += m.rms * target;
    t2 += m.mean_abs * target;
    ++out.samples;
    if (std::find(out.families.begin(), out.families.end(), sample.family) == out.families.end())
      out.families.push_back(sample.family);
    out.elements_per_sample = std::max(out.elements_per_sample, sample.values.size());
  }
  require(out.samples >= 2, "SAWB calibration needs at least two non-degenerate samples");
  const double det = s11 * s22 - s12 * s12;
  require(std::abs(det) > 1e-300 * std::max(1.0, s11 * s22),
          "SAWB calibration is underdetermined (collinear statistics)");
  out.c1 = (t1 * s22 - t2 * s12) / det;
  out.c2 = (s11 * t2 - s12 * t1) / det;
  out.seed = seed;
  return out;
}

const SawbCoefficients& default_sawb_coefficients() {
  static const SawbCoefficients coeffs = [] {
    const auto set = make_calibration_set(0);
    return sawb_calibrate(set, 0);
  }();
  return coeffs;
}

std::string sawb_to_json(const SawbCoefficients& c) {
  nlohmann::json j;
  j["c1"] = c.c1;
  j["c2"] = c.c2;
  j["provenance"] = {{"families", c.families},
                     {"samples", c.samples},
                     {"elements_per_sample", c.elements_per_sample},
                     {"seed", c.seed},
                     {"method", "grid-search 4-level MSE optimum, least squares on (rms, mean_abs)"}};
  return j.dump(2);
}

SawbCoefficients sawb_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SawbCoefficients c;
    c.c1 = j.at("c1").get<double>();
    c.c2 = j.at("c2").get<double>();
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      c.families = p.value("families", std::vector<std::string>{});
      c.samples = p.value("samples", std::size_t{0});
      c.elements_per_sample = p.value("elements_per_sample", std::size_t{0});
      c.seed = p.value("seed", std::uint64_t{0});
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kDataFormat, std::string("invalid SAWB coefficient JSON: ") + e.what());
  }
}

double pact_step(int bits, double alpha) { return alpha / static_cast<double>((1 << bits) - 1); }

double pact_value(double a, double alpha, int bits) noexcept {
  const double step = pact_step(bits, alpha);
  const double kmax = static_cast<double>((1 << bits) - 1);
  const double clipped = std::clamp(a, 0.0, alpha);
  return std::clamp(round_half_away(clipped / step), 0.0, kmax) * step;
}

PactResult pact_quantize(std::span<const double> a, double alpha, int bits) {
  check_bits(bits, kMinBits, kMaxBits);
  require(alpha > 0.0 && std::isfinite(alpha), "PACT clip must be positive");
  PactResult r;
  r.values.resize(a.size());
  r.grad_input.resize(a.size());
  r.grad_alpha.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < -kPactNegativeTolerance)
      require(false, "PACT input must be post-ReLU; found " + std::to_string(a[i]) + " at index " + std::to_string(i));
    r.values[i] = pact_value(a[i], alpha, bits);
    r.grad_input[i] = (a[i] > 0.0 && a[i] < alpha) ? 1.0 : 0.0;
    r.grad_alpha[i] = a[i] >= alpha ? 1.0 : 0.0;
  }
  return r;
}

}  // namespace cwhawq
