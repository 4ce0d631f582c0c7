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

#include "cwhawq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cwhawq/error.hpp"
#include "cwhawq/quantizers.hpp"

namespace cwhawq {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "checkpoints assume IEEE-754 doubles");

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      fail(ErrorCode::kDataFormat, "checkpoint truncated at byte offset " + std::to_string(pos_));
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

Tensor int_tensor(const std::vector<int>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = v[i];
  return t;
}

std::vector<int> to_ints(const Tensor& t, const std::string& name) {
  std::vector<int> out;
  for (double d : t.data) {
    require(d == static_cast<double>(static_cast<int>(d)), "tensor " + name + " holds non-integer bits",
            ErrorCode::kDataFormat);
    out.push_back(static_cast<int>(d));
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  std::map<std::string, const Tensor*> named;
  std::vector<std::pair<std::string, Tensor>> owned;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (!model.has_weights(l)) continue;
    named["layer." + std::to_string(l) + ".weight"] = &model.params(l).weight;
    if (!model.params(l).bias.empty()) named["layer." + std::to_string(l) + ".bias"] = &model.params(l).bias;
  }
  const FakeQuant& q = model.quant();
  for (const auto& [l, wq] : q.weights) owned.emplace_back("quant.w." + std::to_string(l) + ".bits", int_tensor(wq.bits));
  for (const auto& [l, aq] : q.activations) {
    owned.emplace_back("quant.a." + std::to_string(l) + ".bits", int_tensor(aq.bits));
    owned.emplace_back("quant.a." + std::to_string(l) + ".alpha", Tensor({aq.alpha.size()}, aq.alpha));
  }
  for (const auto& [name, t] : owned) named[name] = &t;

  Writer w;
  w.raw("NNQ1", 4);
  w.u32(kCheckpointVersion);
  w.str(model.descriptor());
  w.str(sawb_to_json(q.sawb));
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (std::size_t d : t->shape) w.u64(d);
    for (double v : t->data) w.f64(v);
  }
  return w.take();
}

Model deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "NNQ1") fail(ErrorCode::kDataFormat, "bad checkpoint magic at byte offset 0");
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion,
          "unsupported checkpoint version " + std::to_string(version) + " at byte offset " +
              std::to_string(version_at),
          ErrorCode::kDataFormat);
  Model model = [&] {
    const std::string desc = r.str();
    try {
      return Model::from_descriptor(desc);
    } catch (const Error& e) {
      fail(ErrorCode::kDataFormat, std::string("bad model descriptor in checkpoint: ") + e.what());
    }
  }();
  FakeQuant q;
  q.sawb = sawb_from_json(r.str());
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.str();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    const std::size_t n = numel(shape);
    require(n <= bytes.size() / 8, "tensor " + name + " larger than the file (offset " + std::to_string(at) + ")",
            ErrorCode::kDataFormat);
    std::vector<double> data(n);
    for (double& v : data) v = r.f64();
    if (!tensors.emplace(name, Tensor(std::move(shape), std::move(data))).second)
      fail(ErrorCode::kDataFormat, "duplicate tensor " + name + " at byte offset " + std::to_string(at));
  }
  require(r.at_end(), "trailing bytes after checkpoint at offset " + std::to_string(r.offset()),
          ErrorCode::kDataFormat);

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorCode::kDataFormat, "checkpoint is missing tensor " + name);
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    if (!model.has_weights(l)) continue;
    LayerParams& p = model.mutable_params(l);
    Tensor wt = take("layer." + std::to_string(l) + ".weight");
    require(wt.shape == p.weight.shape, "weight shape mismatch for layer " + std::to_string(l),
            ErrorCode::kDataFormat);
    p.weight = std::move(wt);
    if (!p.bias.empty()) {
      Tensor bt = take("layer." + std::to_string(l) + ".bias");
      require(bt.shape == p.bias.shape, "bias shape mismatch for layer " + std::to_string(l),
              ErrorCode::kDataFormat);
      p.bias = std::move(bt);
    }
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const std::string w = "quant.w." + std::to_string(l) + ".bits";
    if (tensors.count(w)) q.weights[l] = WeightQuantizer{to_ints(take(w), w)};
    const std::string ab = "quant.a." + std::to_string(l) + ".bits";
    if (tensors.count(ab)) {
      ActivationQuantizer aq;
      aq.bits = to_ints(take(ab), ab);
      aq.alpha = take("quant.a." + std::to_string(l) + ".alpha").data;
      q.activations[l] = std::move(aq);
    }
  }
  if (!tensors.empty()) fail(ErrorCode::kDataFormat, "checkpoint has unknown tensor " + tensors.begin()->first);
  try {
    model.set_quant(std::move(q));
  } catch (const Error& e) {
    fail(ErrorCode::kDataFormat, std::string("invalid quantizer state in checkpoint: ") + e.what());
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write " + path.string(), ErrorCode::kDataFormat);
  const std::string bytes = serialize_checkpoint(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), "failed writing " + path.string(), ErrorCode::kDataFormat);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint " + path.string(), ErrorCode::kDataFormat);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace cwhawq
