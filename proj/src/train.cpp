// Copyright 2026 The chgate Authors.
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

#include "chgate/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "chgate/error.hpp"
#include "chgate/ops.hpp"
#include "chgate/optim.hpp"
#include "chgate/rng.hpp"
#include "chgate/tape.hpp"

namespace chgate {

namespace {

using nlohmann::json;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void require_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0,1], got " + num(v));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
  require_unit(lr_decay_factor, "lr_decay_factor");
  require_unit(momentum, "momentum");
  require_unit(target_rate, "target_rate");
  if (!(gate_init_p > 0.0 && gate_init_p < 1.0)) {
    throw ConfigError("gate_init_p must lie strictly between 0 and 1");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(wd_gate_multiplier >= 0.0)) {
    throw ConfigError("wd_gate_multiplier must be >= 0");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(gate_grad_scale > 0.0)) throw ConfigError("gate_grad_scale must be positive");
  if (!(head_grad_scale > 0.0)) throw ConfigError("head_grad_scale must be positive");
  if (!(activation_loss_weight >= 0.0)) {
    throw ConfigError("activation_loss_weight must be >= 0");
  }
  if (head_hidden < 1) throw ConfigError("head_hidden must be positive");
  for (std::int64_t s : lr_step_epochs) {
    if (s < 0) throw ConfigError("lr_step_epochs must be non-negative");
  }
  if (gate_kind != "none") parse_gate_kind(gate_kind);
  if (network != "reference" && !std::filesystem::exists(network)) {
    throw ConfigError("network spec " + network + " does not exist");
  }
}

json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_decay_factor", lr_decay_factor},
          {"lr_step_epochs", lr_step_epochs},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"wd_gate_multiplier", wd_gate_multiplier},
          {"target_rate", target_rate},
          {"loss_kind", to_string(loss_kind)},
          {"gate_kind", gate_kind},
          {"granularity", to_string(granularity)},
          {"gate_init_p", gate_init_p},
          {"temperature", temperature},
          {"dataset", dataset.to_json()},
          {"network", network},
          {"output_dir", output_dir},
          {"gate_grad_scale", gate_grad_scale},
          {"head_grad_scale", head_grad_scale},
          {"activation_loss_weight", activation_loss_weight},
          {"sample_mode", to_string(sample_mode)},
          {"backward_mode", to_string(backward_mode)},
          {"head_hidden", head_hidden}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  const json known = c.to_json();
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) {
      throw ConfigError("unknown key '" + item.key() + "' in train config");
    }
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("lr_decay_factor", c.lr_decay_factor);
    get("lr_step_epochs", c.lr_step_epochs);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("wd_gate_multiplier", c.wd_gate_multiplier);
    get("target_rate", c.target_rate);
    if (j.contains("loss_kind")) {
      c.loss_kind = parse_loss_kind(j.at("loss_kind").get<std::string>());
    }
    get("gate_kind", c.gate_kind);
    if (j.contains("granularity")) {
      c.granularity = parse_granularity(j.at("granularity").get<std::string>());
    }
    get("gate_init_p", c.gate_init_p);
    get("temperature", c.temperature);
    if (j.contains("dataset")) c.dataset = DatasetDescriptor::from_json(j.at("dataset"));
    get("network", c.network);
    get("output_dir", c.output_dir);
    get("gate_grad_scale", c.gate_grad_scale);
    get("head_grad_scale", c.head_grad_scale);
    get("activation_loss_weight", c.activation_loss_weight);
    if (j.contains("sample_mode")) {
      c.sample_mode = parse_sample_mode(j.at("sample_mode").get<std::string>());
    }
    if (j.contains("backward_mode")) {
      c.backward_mode =
          parse_backward_mode(j.at("backward_mode").get<std::string>());
    }
    get("head_hidden", c.head_hidden);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + " is not valid JSON");
  return from_json(j);
}

NetworkSpec TrainConfig::network_spec(const Dataset& data) const {
  NetworkSpec spec;
  if (network == "reference") {
    spec = NetworkSpec::reference(data.num_classes, data.image_size(),
                                  data.channels());
  } else {
    std::ifstream in(network);
    if (!in) throw ConfigError("cannot open network spec " + network);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(network + " is not valid JSON");
    spec = NetworkSpec::from_json(j);
    if (spec.in_channels != data.channels() ||
        spec.image_size != data.image_size() ||
        spec.num_classes != data.num_classes) {
      throw ConfigError("network spec " + network +
                        " does not match the dataset geometry");
    }
  }
  if (!gated()) return without_gating(spec);
  return with_gating(spec, granularity, parse_gate_kind(gate_kind));
}

BuildOptions TrainConfig::build_options() const {
  BuildOptions o;
  o.seed = seed;
  o.gate_init_p = gate_init_p;
  o.head_hidden = head_hidden;
  return o;
}

double TrainConfig::lr_at(std::int64_t epoch) const {
  double v = lr;
  for (std::int64_t s : lr_step_epochs) {
    if (epoch >= s) v *= lr_decay_factor;
  }
  return v;
}

double EvalMetrics::mean_activation() const {
  if (gate_rates.empty()) return 1.0;
  return std::accumulate(gate_rates.begin(), gate_rates.end(), 0.0) /
         static_cast<double>(gate_rates.size());
}

double EvalMetrics::polarized_fraction(double lo, double hi) const {
  if (p_mean.empty()) return 0.0;
  std::size_t n = 0;
  for (double p : p_mean) n += (p < lo || p > hi) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(p_mean.size());
}

InferenceStrategy telemetry_strategy(const GatedNetwork& net) {
  InferenceStrategy s;
  s.kind = net.has_dependent_gates() ? StrategyKind::kStochastic
                                     : StrategyKind::kThreshold;
  s.tau = 0.5;
  return s;
}

EvalMetrics evaluate(GatedNetwork& net, const Dataset& data,
                     const InferenceStrategy& strategy, std::uint64_t seed,
                     std::int64_t batch) {
  strategy.validate();
  EvalMetrics m;
  const std::int64_t n = data.size();
  const std::int64_t g = net.num_gates();
  const std::int64_t k = data.num_classes;
  m.gate_rates.assign(static_cast<std::size_t>(g), 0.0);
  m.p_mean.assign(static_cast<std::size_t>(g), 0.0);
  m.class_rates.assign(static_cast<std::size_t>(k),
                       std::vector<double>(static_cast<std::size_t>(g), 0.0));
  std::vector<std::int64_t> class_count(static_cast<std::size_t>(k), 0);
  m.labels = data.labels;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += batch) {
    const std::int64_t stop = std::min(n, start + batch);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = data.batch(idx);
    const InferenceResult r = run_inference(
        net, x, strategy, seed, static_cast<std::uint64_t>(start) * 1024);
    const double passes = static_cast<double>(r.traces.size());
    for (std::int64_t i = 0; i < stop - start; ++i) {
      const auto si = static_cast<std::size_t>(start + i);
      const int label = data.labels[si];
      const int pred = r.labels[static_cast<std::size_t>(i)];
      m.predictions.push_back(pred);
      m.sample_flops.push_back(r.flops[static_cast<std::size_t>(i)]);
      correct += pred == label;
      ++class_count[static_cast<std::size_t>(label)];
      for (std::int64_t j = 0; j < g; ++j) {
        double z = 0.0;
        for (const auto& t : r.traces) z += t[i * g + j];
        z /= passes;
        m.gate_rates[static_cast<std::size_t>(j)] += z;
        m.class_rates[static_cast<std::size_t>(label)][static_cast<std::size_t>(j)] += z;
        m.p_mean[static_cast<std::size_t>(j)] += r.probs[i * g + j];
      }
    }
  }
  if (n == 0) return m;
  for (std::int64_t j = 0; j < g; ++j) {
    m.gate_rates[static_cast<std::size_t>(j)] /= static_cast<double>(n);
    m.p_mean[static_cast<std::size_t>(j)] /= static_cast<double>(n);
  }
  for (std::int64_t c = 0; c < k; ++c) {
    if (class_count[static_cast<std::size_t>(c)] == 0) continue;
    for (auto& v : m.class_rates[static_cast<std::size_t>(c)]) {
      v /= static_cast<double>(class_count[static_cast<std::size_t>(c)]);
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  m.mean_flops = std::accumulate(m.sample_flops.begin(), m.sample_flops.end(), 0.0) /
                 static_cast<double>(n);
  m.flops_ratio = m.mean_flops / static_cast<double>(net.flops_model().max_flops());
  return m;
}

void write_predictions_csv(const EvalMetrics& m,
                           const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "index,label,prediction,flops\n";
  for (std::size_t i = 0; i < m.predictions.size(); ++i) {
    out << i << ',' << m.labels[i] << ',' << m.predictions[i] << ','
        << num(m.sample_flops[i]) << '\n';
  }
}

json RunSummary::to_json() const {
  return {{"final_accuracy", final_accuracy},
          {"flops_ratio", flops_ratio},
          {"polarized_fraction", polarized_fraction},
          {"polarized_thresholds", {0.05, 0.95}},
          {"target_rate", target_rate},
          {"achieved_mean_activation", achieved_mean_activation},
          {"num_gates", num_gates},
          {"max_flops", max_flops},
          {"best_accuracy", best_accuracy},
          {"best_epoch", best_epoch}};
}

void emit_telemetry(const GateTelemetry& t, const RunSummary& s,
                    const std::filesystem::path& dir) {
  if (t.epochs.empty()) throw ValueError("telemetry is empty");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  {
    std::ofstream out = open_out(dir / "gates_per_epoch.csv");
    out << "epoch,gate_id,activation_rate,p_mean\n";
    for (const auto& e : t.epochs) {
      for (std::size_t g = 0; g < e.activation_rate.size(); ++g) {
        out << e.epoch << ',' << g << ',' << num(e.activation_rate[g]) << ','
            << num(e.p_mean[g]) << '\n';
      }
    }
  }
  {
    std::ofstream out = open_out(dir / "class_heatmap.csv");
    out << "class_id,gate_id,activation_rate\n";
    for (std::size_t c = 0; c < t.class_heatmap.size(); ++c) {
      for (std::size_t g = 0; g < t.class_heatmap[c].size(); ++g) {
        out << c << ',' << g << ',' << num(t.class_heatmap[c][g]) << '\n';
      }
    }
  }
  std::ofstream out = open_out(dir / "summary.json");
  out << s.to_json().dump(2) << '\n';
}

void write_metrics_csv(const std::vector<EpochMetrics>& log, std::ostream& out) {
  out << "epoch,lr,train_loss,train_ce,train_act_loss,train_activation,"
         "eval_accuracy,eval_flops_ratio,eval_activation\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << num(e.lr) << ',' << num(e.train_loss) << ','
        << num(e.train_ce) << ',' << num(e.train_act_loss) << ','
        << num(e.train_activation) << ',' << num(e.eval_accuracy) << ','
        << num(e.eval_flops_ratio) << ',' << num(e.eval_activation) << '\n';
  }
}

namespace {

json gate_p_summary(GatedNetwork& net, const Tensor& last_probs) {
  std::vector<double> p;
  if (net.num_gates() > 0 && !net.has_dependent_gates()) {
    p = net.independent_probabilities();
  } else if (last_probs.defined()) {
    p.assign(last_probs.data().begin(), last_probs.data().end());
  }
  if (p.empty()) return nullptr;
  double lo = 1.0, hi = 0.0, sum = 0.0;
  std::size_t nonfinite = 0;
  for (double v : p) {
    if (!std::isfinite(v)) {
      ++nonfinite;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  return {{"min", lo},
          {"max", hi},
          {"mean", sum / static_cast<double>(std::max<std::size_t>(1, p.size() - nonfinite))},
          {"non_finite", nonfinite}};
}

[[noreturn]] void diverged(const TrainConfig& cfg, GatedNetwork& net,
                           std::int64_t epoch, std::int64_t step, double lr,
                           double total, double ce, double act,
                           const Tensor& probs, const std::string& cause) {
  json dump = {{"cause", cause}, {"epoch", epoch}, {"step", step},
               {"lr", lr},       {"loss_total", total},
               {"loss_ce", ce},  {"loss_activation", act}};
  try {
    dump["gate_p"] = gate_p_summary(net, probs);
  } catch (const Error&) {
    dump["gate_p"] = "unavailable";
  }
  if (!cfg.output_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    std::ofstream out(std::filesystem::path(cfg.output_dir) / "divergence.json");
    out << dump.dump(2) << '\n';
  }
  throw DivergenceError("training diverged: " + dump.dump());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const Dataset data = cfg.dataset.load();
  const Split split = split_train_eval(data);
  const NetworkSpec spec = cfg.network_spec(data);
  TrainResult result;
  result.net.emplace(GatedNetwork::build(spec, cfg.build_options()));
  GatedNetwork& net = *result.net;
  const std::int64_t g = net.num_gates();

  std::vector<Parameter*> params = net.parameter_ptrs();
  const double gate_wd =
      g > 0 ? gate_weight_decay_coefficient(cfg.weight_decay, g, cfg.wd_gate_multiplier)
            : 0.0;
  for (Parameter* p : params) {
    if (p->is_gate) {
      p->weight_decay = static_cast<float>(gate_wd);
      p->grad_scale = static_cast<float>(cfg.gate_grad_scale);
    } else if (p->name.starts_with("gate.")) {
      // Gate-head parameters.
      p->weight_decay = static_cast<float>(gate_wd);
      if (p->name.ends_with(".head.fc2.bias")) {
        p->grad_scale = static_cast<float>(cfg.head_grad_scale);
      }
    } else {
      p->weight_decay = static_cast<float>(cfg.weight_decay);
    }
  }
  const std::vector<double> aig_targets(static_cast<std::size_t>(g), cfg.target_rate);
  const TargetRate target(cfg.target_rate);
  GateSampling sampling;
  sampling.temperature = static_cast<float>(cfg.temperature);
  sampling.mode = cfg.sample_mode;
  sampling.backward = cfg.backward_mode;

  const std::filesystem::path out_dir = cfg.output_dir;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error("cannot create output directory " + out_dir.string());
    std::ofstream c = open_out(out_dir / "config.json");
    c << cfg.to_json().dump(2) << '\n';
  }
  const json ckpt_meta = {{"config", cfg.to_json()}};
  const InferenceStrategy eval_strategy = telemetry_strategy(net);
  const std::uint64_t eval_seed = mix64(cfg.seed ^ 0x5eedULL);

  const std::int64_t n_train = split.train.size();
  std::int64_t step = 0;
  double best = -1.0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    RngStream shuffle = RngStream::derive(cfg.seed, StreamFamily::kShuffle,
                                          {static_cast<std::uint64_t>(epoch)});
    for (std::int64_t i = n_train - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(shuffle.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.lr = lr;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start + 2 <= n_train; start += cfg.batch_size) {
      const std::int64_t stop = std::min(n_train, start + cfg.batch_size);
      std::span<const std::int64_t> idx(order.data() + start,
                                        static_cast<std::size_t>(stop - start));
      const Tensor x = split.train.batch(idx);
      std::vector<int> labels;
      for (std::int64_t i : idx) labels.push_back(split.train.labels[static_cast<std::size_t>(i)]);

      zero_grads(params);
      Tape tape;
      TapeScope scope(tape);
      ForwardOptions o;
      o.train = true;
      o.gates = g > 0 ? GateMode::kSample : GateMode::kNone;
      o.sampling = sampling;
      o.noise_seed = cfg.seed;
      o.noise_key = static_cast<std::uint64_t>(step);
      ForwardResult fr;
      try {
        fr = net.forward(x, o);
      } catch (const ValueError& e) {
        // Overflowing activations surface as non-finite BN statistics.
        if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
        diverged(cfg, net, epoch + 1, step, lr, NAN, NAN, NAN, Tensor(), e.what());
      }
      Tensor ce = ops::cross_entropy(fr.logits, labels);
      Tensor total = ce;
      double act_value = 0.0;
      double activation = 1.0;
      if (g > 0) {
        ActivationRecord rec;
        rec.z = fr.z;
        Tensor act;
        switch (cfg.loss_kind) {
          case LossKind::kBatch: act = batch_activation_loss(rec, target); break;
          case LossKind::kFlops:
            act = flops_activation_loss(rec, net.flops_model(), target);
            break;
          case LossKind::kAig: act = aig_per_gate_loss(rec, aig_targets); break;
        }
        total = total_training_loss(ce, act, static_cast<float>(cfg.activation_loss_weight));
        act_value = act.item();
        activation = std::accumulate(fr.z.data().begin(), fr.z.data().end(), 0.0) /
                     static_cast<double>(fr.z.numel());
      }
      const double total_value = total.item();
      if (!std::isfinite(total_value)) {
        diverged(cfg, net, epoch + 1, step, lr, total_value, ce.item(), act_value,
                 fr.probs, "non-finite loss");
      }
      tape.backward(total);
      try {
        sgd_step(params, static_cast<float>(lr), static_cast<float>(cfg.momentum));
      } catch (const DivergenceError& e) {
        diverged(cfg, net, epoch + 1, step, lr, total_value, ce.item(), act_value,
                 fr.probs, e.what());
      }
      em.train_loss += total_value;
      em.train_ce += ce.item();
      em.train_act_loss += act_value;
      em.train_activation += activation;
      ++batches;
      ++step;
    }
    if (batches > 0) {
      em.train_loss /= static_cast<double>(batches);
      em.train_ce /= static_cast<double>(batches);
      em.train_act_loss /= static_cast<double>(batches);
      em.train_activation /= static_cast<double>(batches);
    }
    const EvalMetrics ev = evaluate(net, split.eval, eval_strategy, eval_seed);
    em.eval_accuracy = ev.accuracy;
    em.eval_flops_ratio = ev.flops_ratio;
    em.eval_activation = ev.mean_activation();
    result.log.push_back(em);
    result.telemetry.epochs.push_back({em.epoch, ev.gate_rates, ev.p_mean});
    if (ev.accuracy > best) {
      best = ev.accuracy;
      result.summary.best_accuracy = ev.accuracy;
      result.summary.best_epoch = em.epoch;
      if (!out_dir.empty()) {
        json meta = ckpt_meta;
        meta["epoch"] = em.epoch;
        meta["eval_accuracy"] = ev.accuracy;
        net.save(out_dir / "best.ckpt", meta);
      }
    }
    if (progress != nullptr) {
      *progress << "epoch " << em.epoch << "/" << cfg.epochs << " lr " << num(lr)
                << " loss " << num(em.train_loss) << " ce " << num(em.train_ce)
                << " act " << num(em.train_activation) << " eval_acc "
                << num(ev.accuracy) << " flops " << num(ev.flops_ratio) << '\n';
    }
  }

  result.final_eval = evaluate(net, split.eval, eval_strategy, eval_seed);
  result.telemetry.class_heatmap = result.final_eval.class_rates;
  RunSummary& s = result.summary;
  s.final_accuracy = result.final_eval.accuracy;
  s.flops_ratio = result.final_eval.flops_ratio;
  s.polarized_fraction = result.telemetry.epochs.back().p_mean.empty()
                             ? 0.0
                             : result.final_eval.polarized_fraction();
  s.target_rate = cfg.target_rate;
  s.achieved_mean_activation = result.final_eval.mean_activation();
  s.num_gates = g;
  s.max_flops = net.flops_model().max_flops();

  if (!out_dir.empty()) {
    json meta = ckpt_meta;
    meta["epoch"] = cfg.epochs;
    meta["eval_accuracy"] = s.final_accuracy;
    net.save(out_dir / "final.ckpt", meta);
    std::ofstream m = open_out(out_dir / "metrics.csv");
    write_metrics_csv(result.log, m);
    write_predictions_csv(result.final_eval, out_dir / "predictions.csv");
    emit_telemetry(result.telemetry, s, out_dir);
  }
  return result;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (Granularity gran : {Granularity::kPerLayer, Granularity::kPerChannel}) {
    for (LossKind loss : {LossKind::kBatch, LossKind::kAig}) {
      TrainConfig c = base;
      c.granularity = gran;
      c.loss_kind = loss;
      c.gate_kind = "independent";
      if (!base.output_dir.empty()) {
        c.output_dir = (std::filesystem::path(base.output_dir) /
                        (std::string(to_string(gran)) + "_" + to_string(loss)))
                           .string();
      }
      if (progress != nullptr) {
        *progress << "ablation run " << to_string(gran) << " / " << to_string(loss)
                  << '\n';
      }
      const TrainResult r = train(c, progress);
      rows.push_back({to_string(gran), to_string(loss), r.summary.final_accuracy,
                      r.summary.flops_ratio, r.summary.achieved_mean_activation,
                      r.summary.polarized_fraction});
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "granularity,loss_kind,accuracy,flops_ratio,mean_activation,"
         "polarized_fraction\n";
  for (const auto& r : rows) {
    out << r.granularity << ',' << r.loss_kind << ',' << num(r.accuracy) << ','
        << num(r.flops_ratio) << ',' << num(r.mean_activation) << ','
        << num(r.polarized_fraction) << '\n';
  }
}

}  // namespace chgate
