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

#include "cwhawq/model.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"

namespace cwhawq {

namespace {

std::uint64_t next_model_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void shape_error(std::size_t layer, const Layer& l, const std::string& expected, const Shape& actual) {
  fail(ErrorCode::kInvalidArgument, "layer " + std::to_string(layer) + " (" + layer_name(l) + "): expected input " +
                                        expected + ", got " + to_string(actual));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(overloaded{[](const Dense&) { return std::string("dense"); },
                               [](const Conv2d&) { return std::string("conv2d"); },
                               [](const Relu&) { return std::string("relu"); },
                               [](const Sigmoid&) { return std::string("sigmoid"); },
                               [](const MaxPool2x2&) { return std::string("maxpool2x2"); },
                               [](const Flatten&) { return std::string("flatten"); }},
                    layer);
}

Model::Model(Shape input_shape, std::vector<Layer> layers, std::optional<LossHead> head)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)), head_(std::move(head)), id_(next_model_id()) {
  validate_and_layout();
}

Model::Model(const Model& other)
    : input_shape_(other.input_shape_),
      layers_(other.layers_),
      head_(other.head_),
      shapes_(other.shapes_),
      params_(other.params_),
      weight_offset_(other.weight_offset_),
      bias_offset_(other.bias_offset_),
      param_count_(other.param_count_),
      quant_(other.quant_),
      id_(next_model_id()),
      version_(0) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

void Model::validate_and_layout() {
  require(!input_shape_.empty(), "model input shape must not be empty");
  for (auto d : input_shape_) require(d > 0, "model input dimensions must be positive");
  Shape cur = input_shape_;
  shapes_.clear();
  params_.assign(layers_.size(), {});
  weight_offset_.assign(layers_.size(), 0);
  bias_offset_.assign(layers_.size(), 0);
  param_count_ = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    std::visit(overloaded{
                   [&](const Dense& d) {
                     if (cur.size() != 1 || cur[0] != d.in) shape_error(i, l, "[" + std::to_string(d.in) + "]", cur);
                     require(d.out > 0, "dense layer " + std::to_string(i) + " needs out > 0");
                     params_[i].weight = Tensor({d.out, d.in});
                     if (d.bias) params_[i].bias = Tensor({d.out});
                     cur = {d.out};
                   },
                   [&](const Conv2d& c) {
                     if (cur.size() != 3 || cur[0] != c.in_channels)
                       shape_error(i, l, "[" + std::to_string(c.in_channels) + ",H,W]", cur);
                     require(c.kernel_h % 2 == 1 && c.kernel_w % 2 == 1 && c.out_channels > 0,
                             "conv2d layer " + std::to_string(i) + " needs odd kernels and out_channels > 0");
                     params_[i].weight = Tensor({c.out_channels, c.in_channels, c.kernel_h, c.kernel_w});
                     params_[i].bias = Tensor({c.out_channels});
                     cur = {c.out_channels, cur[1], cur[2]};
                   },
                   [&](const Relu&) {},
                   [&](const Sigmoid&) {},
                   [&](const MaxPool2x2&) {
                     if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) shape_error(i, l, "[C,H>=2,W>=2]", cur);
                     cur = {cur[0], cur[1] / 2, cur[2] / 2};
                   },
                   [&](const Flatten&) { cur = {numel(cur)}; },
               },
               l);
    weight_offset_[i] = param_count_;
    param_count_ += params_[i].weight.size();
    bias_offset_[i] = param_count_;
    param_count_ += params_[i].bias.size();
    shapes_.push_back(cur);
  }
  if (head_) {
    std::visit(overloaded{[&](const SoftmaxCrossEntropy&) {
                            require(cur.size() == 1 && cur[0] >= 2,
                                    "softmax cross-entropy head needs a rank-1 output with >= 2 classes, got " +
                                        to_string(cur));
                          },
                          [&](const QuadraticHead& q) {
                            require(numel(cur) == q.dim && q.matrix.size() == q.dim * q.dim,
                                    "quadratic head dimension does not match output " + to_string(cur));
                            for (std::size_t r = 0; r < q.dim; ++r)
                              for (std::size_t c = 0; c < r; ++c)
                                require(q.matrix[r * q.dim + c] == q.matrix[c * q.dim + r],
                                        "quadratic head matrix must be symmetric");
                          }},
               *head_);
  }
}

bool Model::has_weights(std::size_t layer) const { return !params_.at(layer).weight.empty(); }

std::vector<std::size_t> Model::weight_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (has_weights(i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> Model::relu_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<Relu>(layers_[i])) out.push_back(i);
  return out;
}

std::size_t Model::weight_channels(std::size_t layer) const {
  require(has_weights(layer), "layer " + std::to_string(layer) + " has no weights");
  return params_[layer].weight.shape[0];
}

std::size_t Model::weight_channel_size(std::size_t layer) const {
  return params_.at(layer).weight.size() / weight_channels(layer);
}

std::size_t Model::activation_channels(std::size_t layer) const {
  const Shape& s = shapes_.at(layer);
  return s.size() == 3 ? s[0] : 1;
}

std::size_t Model::activation_channel_size(std::size_t layer) const {
  return numel(shapes_.at(layer)) / activation_channels(layer);
}

LayerParams& Model::mutable_params(std::size_t layer) {
  bump();
  return params_.at(layer);
}

std::vector<double> Model::flat_params() const {
  std::vector<double> flat;
  flat.reserve(param_count_);
  for (const auto& p : params_) {
    flat.insert(flat.end(), p.weight.data.begin(), p.weight.data.end());
    flat.insert(flat.end(), p.bias.data.begin(), p.bias.data.end());
  }
  return flat;
}

void Model::set_flat_params(std::span<const double> flat) {
  require(flat.size() == param_count_, "flat parameter vector has length " + std::to_string(flat.size()) +
                                           ", model has " + std::to_string(param_count_));
  bump();
  std::size_t k = 0;
  for (auto& p : params_) {
    for (auto& v : p.weight.data) v = flat[k++];
    for (auto& v : p.bias.data) v = flat[k++];
  }
}

FakeQuant& Model::mutable_quant() {
  bump();
  return quant_;
}

void Model::set_quant(FakeQuant q) {
  for (const auto& [layer, wq] : q.weights) {
    require(layer < layers_.size() && has_weights(layer),
            "weight quantizer attached to layer " + std::to_string(layer) + " which has no weights");
    require(wq.bits.size() == weight_channels(layer), "weight quantizer for layer " + std::to_string(layer) +
                                                          " must cover " + std::to_string(weight_channels(layer)) +
                                                          " channels");
    for (int b : wq.bits) require(b >= kMinBits && b <= kMaxBits, "weight bits out of range");
  }
  for (const auto& [layer, aq] : q.activations) {
    require(layer < layers_.size() && std::holds_alternative<Relu>(layers_[layer]),
            "activation quantizer attached to non-ReLU layer " + std::to_string(layer));
    const std::size_t ch = activation_channels(layer);
    require(aq.bits.size() == ch && aq.alpha.size() == ch,
            "activation quantizer for layer " + std::to_string(layer) + " must cover " + std::to_string(ch) +
                " channels");
    for (int b : aq.bits) require(b >= kMinBits && b <= kMaxBits, "activation bits out of range");
    for (double a : aq.alpha) require(a > 0.0 && std::isfinite(a), "PACT clip must be positive");
  }
  bump();
  quant_ = std::move(q);
}

void Model::init_he(std::uint64_t seed) {
  bump();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& p = params_[i];
    if (p.weight.empty()) continue;
    const double fan_in = static_cast<double>(p.weight.size() / p.weight.shape[0]);
    auto rng = substream(seed, "init", i);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : p.weight.data) v = normal(rng);
    std::fill(p.bias.data.begin(), p.bias.data.end(), 0.0);
  }
}

std::string Model::descriptor() const {
  std::ostringstream os;
  os << "input";
  for (auto d : input_shape_) os << ' ' << d;
  for (const auto& l : layers_) {
    os << "; ";
    std::visit(overloaded{[&](const Dense& d) { os << "dense " << d.in << ' ' << d.out << (d.bias ? "" : " nobias"); },
                          [&](const Conv2d& c) {
                            os << "conv2d " << c.in_channels << ' ' << c.out_channels << ' ' << c.kernel_h << ' '
                               << c.kernel_w;
                          },
                          [&](const auto& other) { os << layer_name(other); }},
               l);
  }
  os << "; head ";
  if (!head_) {
    os << "none";
  } else if (std::holds_alternative<SoftmaxCrossEntropy>(*head_)) {
    os << "softmax-ce";
  } else {
    const auto& q = std::get<QuadraticHead>(*head_);
    os << "quadratic " << q.dim;
    for (double v : q.matrix) os << ' ' << format_double(v);
  }
  return os.str();
}

Model Model::from_descriptor(const std::string& text) {
  Shape input;
  std::vector<Layer> layers;
  std::optional<LossHead> head = SoftmaxCrossEntropy{};
  std::istringstream all(text);
  std::string part;
  while (std::getline(all, part, ';')) {
    std::istringstream is(part);
    std::string kind;
    if (!(is >> kind)) continue;
    auto read = [&](auto& v) {
      if (!(is >> v)) fail(ErrorCode::kDataFormat, "malformed model descriptor entry: '" + part + "'");
    };
    if (kind == "input") {
      std::size_t d;
      while (is >> d) input.push_back(d);
    } else if (kind == "dense") {
      Dense d;
      read(d.in);
      read(d.out);
      std::string flag;
      if (is >> flag) d.bias = flag != "nobias";
      layers.emplace_back(d);
    } else if (kind == "conv2d") {
      Conv2d c;
      read(c.in_channels);
      read(c.out_channels);
      read(c.kernel_h);
      read(c.kernel_w);
      layers.emplace_back(c);
    } else if (kind == "relu") {
      layers.emplace_back(Relu{});
    } else if (kind == "sigmoid") {
      layers.emplace_back(Sigmoid{});
    } else if (kind == "maxpool2x2") {
      layers.emplace_back(MaxPool2x2{});
    } else if (kind == "flatten") {
      layers.emplace_back(Flatten{});
    } else if (kind == "head") {
      std::string h;
      read(h);
      if (h == "none") {
        head.reset();
      } else if (h == "softmax-ce") {
        head = SoftmaxCrossEntropy{};
      } else if (h == "quadratic") {
        QuadraticHead q;
        read(q.dim);
        q.matrix.resize(q.dim * q.dim);
        for (auto& v : q.matrix) read(v);
        head = q;
      } else {
        fail(ErrorCode::kDataFormat, "unknown head '" + h + "' in model descriptor");
      }
    } else {
      fail(ErrorCode::kDataFormat, "unknown layer kind '" + kind + "' in model descriptor");
    }
  }
  return Model(input, layers, head);
}

bool Model::same_architecture(const Model& other) const { return descriptor() == other.descriptor(); }

Model make_mlp_s(const Shape& input_shape, std::size_t classes) {
  std::vector<Layer> layers;
  if (input_shape.size() != 1) layers.emplace_back(Flatten{});
  layers.emplace_back(Dense{numel(input_shape), 128});
  layers.emplace_back(Relu{});
  layers.emplace_back(Dense{128, classes});
  return Model(input_shape, layers);
}

Model make_convnet_s(std::size_t classes) {
  return Model({1, 28, 28}, {Conv2d{1, 8, 3, 3}, Relu{}, MaxPool2x2{}, Conv2d{8, 16, 3, 3}, Relu{}, MaxPool2x2{},
                             Flatten{}, Dense{784, 64}, Relu{}, Dense{64, classes}});
}

Model make_model(const std::string& name, const Shape& input_shape, std::size_t classes) {
  if (name == "mlp-s") return make_mlp_s(input_shape, classes);
  if (name == "convnet-s") {
    require(input_shape == Shape{1, 28, 28}, "convnet-s expects 1x28x28 inputs, got " + to_string(input_shape),
            ErrorCode::kConfig);
    return make_convnet_s(classes);
  }
  fail(ErrorCode::kConfig, "unknown model '" + name + "' (expected mlp-s or convnet-s)");
}

}  // namespace cwhawq
