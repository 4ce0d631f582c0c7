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

#include "cwhawq/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "cwhawq/error.hpp"

namespace cwhawq {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(numel(shape), 0.0) {
  for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + to_string(shape));
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + to_string(shape));
  require(data.size() == numel(shape), "tensor data length " + std::to_string(data.size()) +
                                           " does not match shape " + to_string(shape));
}

bool Tensor::all_finite() const noexcept {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace cwhawq
