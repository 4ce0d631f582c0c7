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

#include "cwhawq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

namespace {

Batch gather(const Shape& sample_shape, const std::vector<double>& xs, const std::vector<int>& ys,
             std::span<const std::size_t> idx) {
  const std::size_t d = numel(sample_shape);
  Shape shape{idx.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Batch b;
  b.inputs.shape = shape;
  b.inputs.data.resize(idx.size() * d);
  b.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(xs.begin() + static_cast<long>(idx[i] * d), d, b.inputs.data.begin() + static_cast<long>(i * d));
    b.labels[i] = ys[idx[i]];
  }
  return b;
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = begin + i;
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kDataFormat, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::filesystem::path& path) {
  if (off + 4 > b.size())
    fail(ErrorCode::kDataFormat, path.string() + ": truncated header at byte offset " + std::to_string(off));
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Batch Dataset::train_batch(std::span<const std::size_t> indices) const {
  for (auto i : indices) require(i < train_size(), "train index out of range");
  return gather(sample_shape, train_x, train_y, indices);
}

Batch Dataset::train_range(std::size_t begin, std::size_t count) const {
  require(begin + count <= train_size() && count > 0, "train range out of bounds");
  const auto idx = iota_range(begin, count);
  return gather(sample_shape, train_x, train_y, idx);
}

Batch Dataset::eval_range(std::size_t begin, std::size_t count) const {
  require(begin + count <= eval_size() && count > 0, "eval range out of bounds");
  const auto idx = iota_range(begin, count);
  return gather(sample_shape, eval_x, eval_y, idx);
}

Dataset Dataset::head(std::size_t train_n, std::size_t eval_n) const {
  Dataset d;
  d.sample_shape = sample_shape;
  d.classes = classes;
  d.warnings = warnings;
  const std::size_t s = sample_size();
  const std::size_t tn = train_n == 0 ? train_size() : std::min(train_n, train_size());
  const std::size_t en = eval_n == 0 ? eval_size() : std::min(eval_n, eval_size());
  d.train_x.assign(train_x.begin(), train_x.begin() + static_cast<long>(tn * s));
  d.train_y.assign(train_y.begin(), train_y.begin() + static_cast<long>(tn));
  d.eval_x.assign(eval_x.begin(), eval_x.begin() + static_cast<long>(en * s));
  d.eval_y.assign(eval_y.begin(), eval_y.begin() + static_cast<long>(en));
  return d;
}

Dataset gen_synthetic(std::uint64_t seed, std::size_t classes, std::size_t n, std::size_t dims, double separation) {
  require(classes >= 2, "synthetic data needs at least two classes");
  require(n >= classes, "synthetic data needs at least one sample per class");
  require(dims >= 1, "synthetic data needs at least one dimension");
  auto rng = substream(seed, "data");
  std::normal_distribution<double> normal(0.0, 1.0);

  // Centres on scaled axes (pairwise distance == separation); beyond `dims`
  // classes, random directions of the same norm.
  const double radius = separation / std::sqrt(2.0);
  std::vector<std::vector<double>> centres(classes, std::vector<double>(dims, 0.0));
  for (std::size_t k = 0; k < classes; ++k) {
    if (k < dims) {
      centres[k][k] = radius;
    } else {
      double norm = 0.0;
      for (auto& v : centres[k]) {
        v = normal(rng);
        norm += v * v;
      }
      for (auto& v : centres[k]) v *= radius / std::sqrt(norm);
    }
  }

  Dataset d;
  d.sample_shape = {dims};
  d.classes = classes;
  std::vector<std::vector<std::size_t>> per_class(classes);
  std::vector<double> xs(n * dims);
  std::vector<int> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    ys[i] = static_cast<int>(k);
    for (std::size_t j = 0; j < dims; ++j) xs[i * dims + j] = centres[k][j] + normal(rng);
    per_class[k].push_back(i);
  }
  std::vector<std::size_t> train_idx, eval_idx;
  for (auto& members : per_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t n_eval = members.size() / 5;
    eval_idx.insert(eval_idx.end(), members.begin(), members.begin() + static_cast<long>(n_eval));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<long>(n_eval), members.end());
  }
  std::shuffle(train_idx.begin(), train_idx.end(), rng);
  std::shuffle(eval_idx.begin(), eval_idx.end(), rng);
  if (eval_idx.empty()) {
    eval_idx = train_idx;
    d.warnings.push_back("evaluation split empty; duplicating the training split");
  }
  for (auto i : train_idx) {
    d.train_x.insert(d.train_x.end(), xs.begin() + static_cast<long>(i * dims),
                     xs.begin() + static_cast<long>((i + 1) * dims));
    d.train_y.push_back(ys[i]);
  }
  for (auto i : eval_idx) {
    d.eval_x.insert(d.eval_x.end(), xs.begin() + static_cast<long>(i * dims),
                    xs.begin() + static_cast<long>((i + 1) * dims));
    d.eval_y.push_back(ys[i]);
  }
  return d;
}

IdxImages read_idx_images(const std::filesystem::path& path, std::size_t limit) {
  const auto b = read_file(path);
  const std::uint32_t magic = be32(b, 0, path);
  if (magic != 0x00000803u)
    fail(ErrorCode::kDataFormat, path.string() + ": bad image magic at byte offset 0");
  IdxImages img;
  img.count = be32(b, 4, path);
  img.rows = be32(b, 8, path);
  img.cols = be32(b, 12, path);
  const std::size_t per = img.rows * img.cols;
  const std::size_t expected = 16 + img.count * per;
  if (b.size() < expected)
    fail(ErrorCode::kDataFormat, path.string() + ": truncated image data at byte offset " + std::to_string(b.size()) +
                                     " (expected " + std::to_string(expected) + " bytes)");
  const std::size_t keep = limit == 0 ? img.count : std::min<std::size_t>(limit, img.count);
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<long>(keep * per));
  img.count = keep;
  return img;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path, std::size_t limit) {
  const auto b = read_file(path);
  const std::uint32_t magic = be32(b, 0, path);
  if (magic != 0x00000801u)
    fail(ErrorCode::kDataFormat, path.string() + ": bad label magic at byte offset 0");
  const std::size_t count = be32(b, 4, path);
  if (b.size() < 8 + count)
    fail(ErrorCode::kDataFormat, path.string() + ": truncated label data at byte offset " + std::to_string(b.size()));
  const std::size_t keep = limit == 0 ? count : std::min(limit, count);
  std::vector<int> labels(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    labels[i] = b[8 + i];
    if (labels[i] > 9)
      fail(ErrorCode::kDataFormat,
           path.string() + ": label " + std::to_string(labels[i]) + " at byte offset " + std::to_string(8 + i));
  }
  return labels;
}

Dataset ingest_mnist(const std::filesystem::path& dir, std::size_t train_limit, std::size_t eval_limit) {
  auto load = [&](const char* images, const char* labels, std::size_t limit, std::vector<double>& xs,
                  std::vector<int>& ys) {
    const auto img = read_idx_images(dir / images, limit);
    ys = read_idx_labels(dir / labels, limit);
    if (img.rows != 28 || img.cols != 28)
      fail(ErrorCode::kDataFormat, (dir / images).string() + ": expected 28x28 images");
    if (ys.size() != img.count)
      fail(ErrorCode::kDataFormat, (dir / labels).string() + ": label count does not match image count");
    xs.resize(img.pixels.size());
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(img.pixels[i]) / 255.0;
  };
  Dataset d;
  d.sample_shape = {1, 28, 28};
  d.classes = 10;
  load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", train_limit, d.train_x, d.train_y);
  load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", eval_limit, d.eval_x, d.eval_y);
  return d;
}

}  // namespace cwhawq
