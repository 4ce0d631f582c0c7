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

#include "cwhawq/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cwhawq/error.hpp"

namespace cwhawq {

namespace pt = boost::property_tree;

namespace {

template <typename T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto v = tree.get_optional<std::string>(key);
  if (!v) return fallback;
  std::istringstream is(*v);
  T out{};
  is >> out;
  if (is.fail() || !(is >> std::ws).eof()) fail(ErrorCode::kConfig, "bad value '" + *v + "' for " + key);
  return out;
}

template <>
std::string get<std::string>(const pt::ptree& tree, const std::string& key, std::string fallback) {
  return tree.get<std::string>(key, fallback);
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "run.model",         "run.dataset",         "run.seed",         "run.out_dir",       "data.mnist_dir",
      "data.train_limit",  "data.eval_limit",     "data.validation",  "data.synthetic_n",  "data.synthetic_classes",
      "train.epochs",      "train.lr",            "train.lr_decay",   "train.batch_size",  "probe.m",
      "probe.n",           "probe.batch_size",    "budget.wcomp",     "budget.abits",      "search.episodes",
      "search.reward_train", "search.finetune_lr_scale", "search.finetune_epochs"};
  return keys;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::kConfig, std::string("config parse error: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(ErrorCode::kConfig, "config key '" + section + "' outside a section");
    for (const auto& [key, value] : body)
      if (!known_keys().count(section + "." + key))
        fail(ErrorCode::kConfig, "unknown config key '" + section + "." + key + "'");
  }
  RunConfig c;
  c.model = get(tree, "run.model", c.model);
  c.dataset = get(tree, "run.dataset", c.dataset);
  c.seed = get(tree, "run.seed", c.seed);
  c.out_dir = get(tree, "run.out_dir", c.out_dir.string());
  c.mnist_dir = get(tree, "data.mnist_dir", c.mnist_dir.string());
  c.train_limit = get(tree, "data.train_limit", c.train_limit);
  c.eval_limit = get(tree, "data.eval_limit", c.eval_limit);
  c.validation = get(tree, "data.validation", c.validation);
  c.synthetic_n = get(tree, "data.synthetic_n", c.synthetic_n);
  c.synthetic_classes = get(tree, "data.synthetic_classes", c.synthetic_classes);
  c.epochs = get(tree, "train.epochs", c.epochs);
  c.lr = get(tree, "train.lr", c.lr);
  c.lr_decay = get(tree, "train.lr_decay", c.lr_decay);
  c.batch_size = get(tree, "train.batch_size", c.batch_size);
  c.probes.m = get(tree, "probe.m", c.probes.m);
  c.probes.n = get(tree, "probe.n", c.probes.n);
  c.probes.batch_size = get(tree, "probe.batch_size", c.probes.batch_size);
  c.budget_wcomp = get(tree, "budget.wcomp", c.budget_wcomp);
  c.budget_abits = get(tree, "budget.abits", c.budget_abits);
  c.episodes = get(tree, "search.episodes", c.episodes);
  c.reward_train = get(tree, "search.reward_train", c.reward_train);
  c.finetune_lr_scale = get(tree, "search.finetune_lr_scale", c.finetune_lr_scale);
  c.finetune_epochs = get(tree, "search.finetune_epochs", c.finetune_epochs);
  c.probes.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f.good()) fail(ErrorCode::kConfig, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

void validate(const RunConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::kConfig, "invalid config: " + what);
  };
  check(c.model == "mlp-s" || c.model == "convnet-s", "run.model must be mlp-s or convnet-s");
  check(c.dataset == "mnist" || c.dataset == "synthetic", "run.dataset must be mnist or synthetic");
  check(!(c.model == "convnet-s" && c.dataset == "synthetic"), "convnet-s needs image data (mnist)");
  check(!c.out_dir.empty(), "run.out_dir must be set");
  check(c.train_limit > 0 && c.eval_limit > 0, "data limits must be positive");
  check(c.synthetic_classes >= 2 && c.synthetic_n >= c.synthetic_classes, "synthetic data needs n >= classes >= 2");
  check(c.batch_size > 0, "train.batch_size must be positive");
  check(std::isfinite(c.lr) && c.lr > 0.0, "train.lr must be positive");
  check(std::isfinite(c.lr_decay) && c.lr_decay > 0.0, "train.lr_decay must be positive");
  check(c.probes.m > 0 && c.probes.n > 0 && c.probes.batch_size > 0, "probe counts must be positive");
  check(std::isfinite(c.budget_wcomp) && c.budget_wcomp >= 4.0 && c.budget_wcomp <= 16.0,
        "budget.wcomp must lie in [4, 16]");
  check(std::isfinite(c.budget_abits) && c.budget_abits >= 2.0 && c.budget_abits <= 8.0,
        "budget.abits must lie in [2, 8]");
  check(c.episodes > 0, "search.episodes must be positive");
  check(c.reward_train > 0, "search.reward_train must be positive");
  check(std::isfinite(c.finetune_lr_scale) && c.finetune_lr_scale > 0.0, "search.finetune_lr_scale must be positive");
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  os << "[run]\nmodel = " << c.model << "\ndataset = " << c.dataset << "\nseed = " << c.seed
     << "\nout_dir = " << c.out_dir.string() << "\n\n[data]\nmnist_dir = " << c.mnist_dir.string()
     << "\ntrain_limit = " << c.train_limit << "\neval_limit = " << c.eval_limit
     << "\nvalidation = " << c.validation << "\nsynthetic_n = " << c.synthetic_n
     << "\nsynthetic_classes = " << c.synthetic_classes << "\n\n[train]\nepochs = " << c.epochs
     << "\nlr = " << fmt(c.lr) << "\nlr_decay = " << fmt(c.lr_decay) << "\nbatch_size = " << c.batch_size
     << "\n\n[probe]\nm = " << c.probes.m << "\nn = " << c.probes.n << "\nbatch_size = " << c.probes.batch_size
     << "\n\n[budget]\nwcomp = " << fmt(c.budget_wcomp) << "\nabits = " << fmt(c.budget_abits)
     << "\n\n[search]\nepisodes = " << c.episodes << "\nreward_train = " << c.reward_train
     << "\nfinetune_lr_scale = " << fmt(c.finetune_lr_scale) << "\nfinetune_epochs = " << c.finetune_epochs << "\n";
  return os.str();
}

}  // namespace cwhawq
