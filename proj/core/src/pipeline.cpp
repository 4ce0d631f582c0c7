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

#include "cwhawq/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cwhawq/apply.hpp"
#include "cwhawq/checkpoint.hpp"
#include "cwhawq/engine.hpp"
#include "cwhawq/error.hpp"
#include "cwhawq/rng.hpp"
#include "cwhawq/train.hpp"

namespace cwhawq {

using json = nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write " + path.string(), ErrorCode::kDataFormat);
  f << text;
  require(f.good(), "failed writing " + path.string(), ErrorCode::kDataFormat);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot read " + path.string(), ErrorCode::kDataFormat);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

namespace {

// Training samples [begin, begin + n) of `src`.
void copy_train(const Dataset& src, std::size_t begin, std::size_t n, std::vector<double>& x, std::vector<int>& y) {
  const std::size_t s = src.sample_size();
  x.assign(src.train_x.begin() + static_cast<long>(begin * s), src.train_x.begin() + static_cast<long>((begin + n) * s));
  y.assign(src.train_y.begin() + static_cast<long>(begin), src.train_y.begin() + static_cast<long>(begin + n));
}

PipelineData split(const Dataset& full, std::size_t train_n, std::size_t validation, std::size_t reward_train) {
  require(train_n > 0 && validation > 0 && train_n + validation <= full.train_size(),
          "not enough training samples for the requested split", ErrorCode::kDataFormat);
  PipelineData d;
  d.main.sample_shape = full.sample_shape;
  d.main.classes = full.classes;
  d.main.warnings = full.warnings;
  copy_train(full, 0, train_n, d.main.train_x, d.main.train_y);
  d.main.eval_x = full.eval_x;
  d.main.eval_y = full.eval_y;
  d.reward.sample_shape = full.sample_shape;
  d.reward.classes = full.classes;
  copy_train(full, 0, std::min(reward_train, train_n), d.reward.train_x, d.reward.train_y);
  copy_train(full, train_n, validation, d.reward.eval_x, d.reward.eval_y);
  return d;
}

std::uint64_t derive(std::uint64_t seed, const std::string& name, std::uint64_t index = 0) {
  return substream(seed, name, index)();
}

SortedChannelList channel_list(const Model& model, TraceTarget target) {
  TraceReport r;
  r.target = target;
  r.granularity = Granularity::kChannel;
  const auto layers = target == TraceTarget::kWeights ? model.weight_layers() : model.relu_layers();
  for (std::size_t l : layers) {
    const std::size_t c = target == TraceTarget::kWeights ? model.weight_channels(l) : model.activation_channels(l);
    const std::size_t cs =
        target == TraceTarget::kWeights ? model.weight_channel_size(l) : model.activation_channel_size(l);
    for (std::size_t j = 0; j < c; ++j) r.entries.push_back({l, j, 0.0, cs, 0.0});
  }
  return sort_channels(r);
}

json layer_map(const std::map<std::size_t, double>& m) {
  json j = json::object();
  for (const auto& [l, v] : m) j[std::to_string(l)] = v;
  return j;
}

std::map<std::size_t, double> layer_map_from(const json& j) {
  std::map<std::size_t, double> m;
  for (const auto& [k, v] : j.items()) m[static_cast<std::size_t>(std::stoul(k))] = v.get<double>();
  return m;
}

}  // namespace

PipelineData load_data(const RunConfig& cfg) {
  validate(cfg);
  if (cfg.dataset == "mnist") {
    const Dataset full = ingest_mnist(cfg.mnist_dir, cfg.train_limit + cfg.validation, cfg.eval_limit);
    require(full.train_size() > cfg.validation, "MNIST training split smaller than the validation hold-out",
            ErrorCode::kDataFormat);
    return split(full, full.train_size() - cfg.validation, cfg.validation, cfg.reward_train);
  }
  const Dataset full = gen_synthetic(derive(cfg.seed, "data"), cfg.synthetic_classes, cfg.synthetic_n);
  const std::size_t validation = std::max<std::size_t>(1, std::min(cfg.validation, full.train_size() / 4));
  require(full.train_size() > validation, "synthetic training split too small", ErrorCode::kDataFormat);
  return split(full, full.train_size() - validation, validation, cfg.reward_train);
}

BaselineResult train_baseline(const RunConfig& cfg, const PipelineData& data) {
  validate(cfg);
  BaselineResult r{make_model(cfg.model, data.main.sample_shape, data.main.classes), 0.0};
  r.model.init_he(derive(cfg.seed, "model-init"));
  double lr = cfg.lr;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    train_epoch(r.model, data.main, TrainOptions{lr, cfg.batch_size, derive(cfg.seed, "baseline-epoch", e)});
    lr *= cfg.lr_decay;
  }
  r.top1 = evaluate(r.model, data.main);
  return r;
}

double finetune(Model& model, const Dataset& data, const RunConfig& cfg, std::size_t epochs) {
  for (std::size_t e = 0; e < epochs; ++e)
    train_epoch(model, data, TrainOptions{cfg.finetune_lr(), cfg.batch_size, derive(cfg.seed, "finetune-epoch", e)});
  return evaluate(model, data);
}

double reward_of(const QuantPolicy& policy, const Model& base, const PipelineData& data, const RunConfig& cfg) {
  Model q = apply_policy(base, policy, default_sawb_coefficients(), &data.main);
  return finetune(q, data.reward, cfg, 1);
}

int uniform_bits_within(double avg_bits) {
  const int b = static_cast<int>(std::floor(avg_bits * (1.0 + 1e-9)));
  require(b >= kMinBits, "budget below 2 bits per element", ErrorCode::kBudgetInfeasible);
  return std::min(b, kMaxBits);
}

UniformResult run_uniform(const RunConfig& cfg, const PipelineData& data, const Model& baseline, int weight_bits,
                          int activation_bits) {
  const SawbCoefficients& sawb = default_sawb_coefficients();
  Model m = apply_policy(baseline, uniform_policy(channel_list(baseline, TraceTarget::kActivations), activation_bits),
                         sawb, &data.main);
  finetune(m, data.main, cfg, cfg.finetune_epochs);
  m = apply_policy(m, uniform_policy(channel_list(m, TraceTarget::kWeights), weight_bits), sawb);
  finetune(m, data.main, cfg, cfg.finetune_epochs);
  return {weight_bits, activation_bits, evaluate(m, data.main)};
}

namespace {

PhaseResult run_phase(const RunConfig& cfg, const PipelineData& data, const Model& base, TraceTarget target,
                      const Progress& progress) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const std::string name = to_string(target);
  PhaseResult p{};
  ProbeConfig probes = cfg.probes;
  probes.seed = derive(cfg.seed, "probes/" + name);
  say(name + ": estimating channel traces");
  p.traces = estimate_traces(base, data.main, target, Granularity::kChannel, probes);
  p.sorted = sort_channels(p.traces);
  p.budget_bits = target == TraceTarget::kWeights ? budget_from_wcomp(p.sorted.total, cfg.budget_wcomp)
                                                  : budget_from_avg_bits(p.sorted.total, cfg.budget_abits);
  SearchOptions opts;
  opts.episodes = cfg.episodes;
  opts.seed = derive(cfg.seed, "search/" + name);
  say(name + ": searching " + std::to_string(cfg.episodes) + " episodes");
  p.search = run_search(
      p.sorted, p.budget_bits, [&](const QuantPolicy& pol) { return reward_of(pol, base, data, cfg); }, opts);
  p.policy = p.search.best;
  validate_policy(p.policy);
  say(name + ": fine-tuning best policy (reward " + std::to_string(p.search.best_reward) + ")");
  p.model = apply_policy(base, p.policy, default_sawb_coefficients(), &data.main);
  p.top1 = finetune(*p.model, data.main, cfg, cfg.finetune_epochs);
  return p;
}

}  // namespace

TwoStepResult run_two_step(const RunConfig& cfg, const PipelineData& data, const BaselineResult& baseline,
                           bool write, const Progress& progress) {
  validate(cfg);
  TwoStepResult r;
  r.activations = run_phase(cfg, data, baseline.model, TraceTarget::kActivations, progress);
  r.weights = run_phase(cfg, data, *r.activations.model, TraceTarget::kWeights, progress);

  RunReport& rep = r.report;
  rep.model = cfg.model;
  rep.dataset = cfg.dataset;
  rep.seed = cfg.seed;
  rep.budget_wcomp = cfg.budget_wcomp;
  rep.budget_abits = cfg.budget_abits;
  rep.baseline_top1 = baseline.top1;
  rep.phase1_top1 = r.activations.top1;
  rep.final_top1 = r.weights.top1;
  rep.avg_w_bits = r.weights.policy.avg_bits;
  rep.avg_a_bits = r.activations.policy.avg_bits;
  rep.wcomp = r.weights.policy.compression;
  rep.weight_size_bits = r.weights.policy.size_bits;
  rep.weight_budget_bits = r.weights.budget_bits;
  rep.activation_size_bits = r.activations.policy.size_bits;
  rep.activation_budget_bits = r.activations.budget_bits;
  rep.layer_w_bits = r.weights.policy.layer_average_bits();
  rep.layer_a_bits = r.activations.policy.layer_average_bits();
  require(rep.weight_size_bits <= rep.weight_budget_bits && rep.activation_size_bits <= rep.activation_budget_bits,
          "final policy violates its budget", ErrorCode::kBudgetInfeasible);
  if (progress) progress("uniform reference");
  rep.uniform = run_uniform(cfg, data, baseline.model, uniform_bits_within(32.0 / cfg.budget_wcomp),
                            uniform_bits_within(cfg.budget_abits));

  if (write) {
    const auto& d = cfg.out_dir;
    std::filesystem::create_directories(d);
    write_text(d / "config.ini", to_ini(cfg));
    write_text(d / "sawb.json", sawb_to_json(default_sawb_coefficients()));
    save_checkpoint(baseline.model, d / "baseline.nnq");
    for (const PhaseResult* p : {&r.activations, &r.weights}) {
      const std::string n = to_string(p->traces.target);
      write_text(d / ("traces_" + n + ".json"), to_json(p->traces));
      write_text(d / ("search_" + n + ".jsonl"), search_log_jsonl(p->search));
      write_text(d / ("policy_" + n + ".json"), to_json(p->policy));
    }
    save_checkpoint(*r.activations.model, d / "phase1.nnq");
    save_checkpoint(*r.weights.model, d / "final.nnq");
    write_text(d / "report.json", to_json(rep));
  }
  return r;
}

std::string to_json(const RunReport& r) {
  json j = {{"model", r.model},
            {"dataset", r.dataset},
            {"seed", r.seed},
            {"budget", {{"wcomp", r.budget_wcomp}, {"abits", r.budget_abits}}},
            {"baseline_top1", r.baseline_top1},
            {"phase1_top1", r.phase1_top1},
            {"final_top1", r.final_top1},
            {"avg_w_bits", r.avg_w_bits},
            {"avg_a_bits", r.avg_a_bits},
            {"wcomp", r.wcomp},
            {"weight_size_bits", r.weight_size_bits},
            {"weight_size_mb", static_cast<double>(r.weight_size_bits) / 8.0 / 1e6},
            {"weight_budget_bits", r.weight_budget_bits},
            {"activation_size_bits", r.activation_size_bits},
            {"activation_budget_bits", r.activation_budget_bits},
            {"layer_w_bits", layer_map(r.layer_w_bits)},
            {"layer_a_bits", layer_map(r.layer_a_bits)}};
  if (r.uniform)
    j["uniform"] = {{"weight_bits", r.uniform->weight_bits},
                    {"activation_bits", r.uniform->activation_bits},
                    {"top1", r.uniform->top1}};
  else
    j["uniform"] = nullptr;
  return j.dump(1);
}

RunReport run_report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunReport r;
    r.model = j.at("model");
    r.dataset = j.at("dataset");
    r.seed = j.at("seed");
    r.budget_wcomp = j.at("budget").at("wcomp");
    r.budget_abits = j.at("budget").at("abits");
    r.baseline_top1 = j.at("baseline_top1");
    r.phase1_top1 = j.at("phase1_top1");
    r.final_top1 = j.at("final_top1");
    r.avg_w_bits = j.at("avg_w_bits");
    r.avg_a_bits = j.at("avg_a_bits");
    r.wcomp = j.at("wcomp");
    r.weight_size_bits = j.at("weight_size_bits");
    r.weight_budget_bits = j.at("weight_budget_bits");
    r.activation_size_bits = j.at("activation_size_bits");
    r.activation_budget_bits = j.at("activation_budget_bits");
    r.layer_w_bits = layer_map_from(j.at("layer_w_bits"));
    r.layer_a_bits = layer_map_from(j.at("layer_a_bits"));
    if (!j.at("uniform").is_null())
      r.uniform = UniformResult{j["uniform"].at("weight_bits"), j["uniform"].at("activation_bits"),
                                j["uniform"].at("top1")};
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::kDataFormat, std::string("malformed run report: ") + e.what());
  }
}

double LandscapeTable::ring_increase() const {
  const std::size_t n = coords.size();
  if (n < 2) return 0.0;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i == 0 || j == 0 || i == n - 1 || j == n - 1) {
        sum += losses[i][j];
        ++count;
      }
  return sum / static_cast<double>(count) - center_loss;
}

LandscapeTable loss_landscape(const Model& model, const Dataset& data, const TraceReport& traces,
                              ChannelSelector selector, double radius, std::size_t steps, std::uint64_t seed,
                              std::optional<std::pair<std::size_t, std::size_t>> channel, std::size_t samples) {
  require(traces.target == TraceTarget::kWeights && traces.granularity == Granularity::kChannel,
          "loss landscapes need a weight trace report at channel granularity");
  require(std::isfinite(radius) && radius >= 0.0, "radius must be non-negative");
  require(steps >= 1, "steps must be at least 1");
  const TraceEntry* pick = nullptr;
  if (selector == ChannelSelector::kExplicit) {
    require(channel.has_value(), "explicit selection needs a channel");
    for (const auto& e : traces.entries)
      if (e.layer == channel->first && e.channel == channel->second) pick = &e;
  } else {
    for (const auto& e : traces.entries) {
      if (!pick) {
        pick = &e;
        continue;
      }
      if (selector == ChannelSelector::kMaxTrace ? e.average > pick->average : e.average < pick->average) pick = &e;
    }
  }
  if (!pick)
    fail(ErrorCode::kInvalidArgument,
         channel ? "channel (" + std::to_string(channel->first) + ", " + std::to_string(channel->second) +
                       ") not found in the trace report"
                 : "trace report has no channels");
  const std::size_t layer = pick->layer, ch = *pick->channel;
  require(layer < model.layer_count() && model.has_weights(layer) && ch < model.weight_channels(layer),
          "channel (" + std::to_string(layer) + ", " + std::to_string(ch) + ") not found in the model");

  const std::size_t cs = model.weight_channel_size(layer);
  auto gen = substream(seed, "landscape");
  std::normal_distribution<double> normal;
  std::vector<double> d1(cs), d2(cs);
  for (double& v : d1) v = normal(gen);
  for (double& v : d2) v = normal(gen);
  auto norm = [](const std::vector<double>& v) { return std::sqrt(dot(v, v)); };
  const double n1 = norm(d1);
  for (double& v : d1) v /= n1;
  const double proj = dot(d1, d2);
  for (std::size_t k = 0; k < cs; ++k) d2[k] -= proj * d1[k];
  const double n2 = norm(d2);
  for (double& v : d2) v /= n2;

  Dataset probe;
  probe.sample_shape = data.sample_shape;
  probe.classes = data.classes;
  const std::size_t n = std::min(samples, data.train_size());
  require(n > 0, "landscape needs training samples", ErrorCode::kDataFormat);
  probe.eval_x.assign(data.train_x.begin(), data.train_x.begin() + static_cast<long>(n * data.sample_size()));
  probe.eval_y.assign(data.train_y.begin(), data.train_y.begin() + static_cast<long>(n));

  LandscapeTable t;
  t.layer = layer;
  t.channel = ch;
  t.radius = radius;
  for (std::size_t i = 0; i < steps; ++i)
    t.coords.push_back(steps == 1 ? 0.0 : -radius + 2.0 * radius * static_cast<double>(i) / static_cast<double>(steps - 1));
  t.center_loss = evaluate_loss(model, probe);
  Model m = model;
  const std::vector<double> w0 = model.params(layer).weight.data;
  const std::size_t base = ch * cs;
  t.losses.assign(steps, std::vector<double>(steps));
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j < steps; ++j) {
      auto& w = m.mutable_params(layer).weight.data;
      for (std::size_t k = 0; k < cs; ++k) w[base + k] = w0[base + k] + t.coords[i] * d1[k] + t.coords[j] * d2[k];
      t.losses[i][j] = evaluate_loss(m, probe);
    }
  return t;
}

std::string landscape_csv(const LandscapeTable& t) {
  std::ostringstream os;
  os << "x,y,loss\n";
  char buf[96];
  for (std::size_t i = 0; i < t.coords.size(); ++i)
    for (std::size_t j = 0; j < t.coords.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", t.coords[i], t.coords[j], t.losses[i][j]);
      os << buf;
    }
  return os.str();
}

}  // namespace cwhawq
