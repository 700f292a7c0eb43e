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

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chgate/data.hpp"
#include "chgate/gating.hpp"
#include "chgate/inference.hpp"
#include "chgate/losses.hpp"
#include "chgate/network.hpp"

namespace chgate {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::int64_t epochs = 30;
  std::int64_t batch_size = 64;
  double lr = 0.05;
  double lr_decay_factor = 0.1;
  std::vector<std::int64_t> lr_step_epochs{15, 25};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double wd_gate_multiplier = 20.0;
  double target_rate = 0.5;
  LossKind loss_kind = LossKind::kBatch;
  // "independent", "dependent", or "none" for the ungated baseline.
  std::string gate_kind = "independent";
  Granularity granularity = Granularity::kPerChannel;
  double gate_init_p = 0.8;
  double temperature = 1.0;
  DatasetDescriptor dataset;
  // "reference" or a path to a NetworkSpec JSON file.
  std::string network = "reference";
  std::string output_dir;
  // Multiplies the loss gradient of independent gate logits (not decay).
  double gate_grad_scale = 3000.0;
  // Multiplies the loss gradient of the gate-head output bias.
  double head_grad_scale = 300.0;
  double activation_loss_weight = 1.0;
  SampleMode sample_mode = SampleMode::kHard;
  BackwardMode backward_mode = BackwardMode::kThroughP;
  std::int64_t head_hidden = 16;

  // Desk-scale defaults.
  static TrainConfig desk_preset() { return {}; }

  // Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  // Keys must be TrainConfig field names; missing keys keep desk defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);

  bool gated() const { return gate_kind != "none"; }
  // Network spec with gating applied, sized for the dataset.
  NetworkSpec network_spec(const Dataset& data) const;
  BuildOptions build_options() const;
  // Learning rate used during (0-based) epoch e.
  double lr_at(std::int64_t epoch) const;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_flops = 0.0;
  double flops_ratio = 0.0;
  std::vector<double> gate_rates;  // [G] mean Z over samples
  std::vector<double> p_mean;      // [G] mean p over samples
  std::vector<std::vector<double>> class_rates;  // [K][G]
  std::vector<int> labels;
  std::vector<int> predictions;
  std::vector<double> sample_flops;

  double mean_activation() const;
  // Fraction of gates with p_mean < lo or > hi.
  double polarized_fraction(double lo = 0.05, double hi = 0.95) const;
};

EvalMetrics evaluate(GatedNetwork& net, const Dataset& data,
                     const InferenceStrategy& strategy, std::uint64_t seed = 0,
                     std::int64_t batch = 100);

// Threshold(0.5) for data-independent gates, one seeded stochastic pass
// for data-dependent gates.
InferenceStrategy telemetry_strategy(const GatedNetwork& net);

void write_predictions_csv(const EvalMetrics& m,
                           const std::filesystem::path& path);

struct EpochGates {
  std::int64_t epoch = 0;
  std::vector<double> activation_rate;
  std::vector<double> p_mean;
};

struct GateTelemetry {
  std::vector<EpochGates> epochs;
  std::vector<std::vector<double>> class_heatmap;  // [K][G]
};

struct EpochMetrics {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double train_act_loss = 0.0;
  double train_activation = 0.0;
  double eval_accuracy = 0.0;
  double eval_flops_ratio = 0.0;
  double eval_activation = 0.0;
};

struct RunSummary {
  double final_accuracy = 0.0;
  double flops_ratio = 1.0;
  double polarized_fraction = 0.0;
  double target_rate = 0.5;
  double achieved_mean_activation = 1.0;
  std::int64_t num_gates = 0;
  std::int64_t max_flops = 0;
  double best_accuracy = 0.0;
  std::int64_t best_epoch = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::optional<GatedNetwork> net;
  GateTelemetry telemetry;
  std::vector<EpochMetrics> log;
  EvalMetrics final_eval;
  RunSummary summary;
};

// Writes gates_per_epoch.csv, class_heatmap.csv and summary.json.
void emit_telemetry(const GateTelemetry& t, const RunSummary& s,
                    const std::filesystem::path& dir);
void write_metrics_csv(const std::vector<EpochMetrics>& log, std::ostream& out);

// Runs the full schedule. When config.output_dir is set, writes
// config.json, metrics.csv, best.ckpt, final.ckpt, predictions.csv and the
// telemetry files there. Progress lines go to `progress` when non-null.
TrainResult train(const TrainConfig& config, std::ostream* progress = nullptr);

struct AblationRow {
  std::string granularity;
  std::string loss_kind;
  double accuracy = 0.0;
  double flops_ratio = 0.0;
  double mean_activation = 0.0;
  double polarized_fraction = 0.0;
};

// {per_layer, per_channel} x {batch, aig with uniform targets} on `base`.
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      std::ostream* progress = nullptr);
void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out);

}  // namespace chgate
