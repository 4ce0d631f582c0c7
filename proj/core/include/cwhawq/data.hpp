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
#include <span>
#include <string>
#include <vector>

#include "cwhawq/engine.hpp"
#include "cwhawq/tensor.hpp"

namespace cwhawq {

/// In-memory classification dataset with a train and an evaluation split.
struct Dataset {
  Shape sample_shape;
  std::size_t classes = 0;
  std::vector<double> train_x;
  std::vector<int> train_y;
  std::vector<double> eval_x;
  std::vector<int> eval_y;
  std::vector<std::string> warnings;

  std::size_t sample_size() const { return numel(sample_shape); }
  std::size_t train_size() const noexcept { return train_y.size(); }
  std::size_t eval_size() const noexcept { return eval_y.size(); }

  Batch train_batch(std::span<const std::size_t> indices) const;
  Batch train_range(std::size_t begin, std::size_t count) const;
  Batch eval_range(std::size_t begin, std::size_t count) const;

  /// First `train_n` / `eval_n` samples of each split (0 keeps the split whole).
  Dataset head(std::size_t train_n, std::size_t eval_n) const;
};

/// Gaussian class blobs (unit variance) whose centres are `separation` apart,
/// class-balanced, split 80/20 per class. Deterministic in `seed`.
Dataset gen_synthetic(std::uint64_t seed, std::size_t classes, std::size_t n, std::size_t dims = 16,
                      double separation = 6.0);

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::filesystem::path& path, std::size_t limit = 0);
std::vector<int> read_idx_labels(const std::filesystem::path& path, std::size_t limit = 0);

/// Loads the four canonical MNIST IDX files from `dir`, pixels scaled to [0,1].
/// `train_limit` / `eval_limit` keep only the leading records (0 = all).
Dataset ingest_mnist(const std::filesystem::path& dir, std::size_t train_limit = 0, std::size_t eval_limit = 0);

}  // namespace cwhawq
