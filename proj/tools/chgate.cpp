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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chgate/checkpoint.hpp"
#include "chgate/data.hpp"
#include "chgate/error.hpp"
#include "chgate/inference.hpp"
#include "chgate/kernels.hpp"
#include "chgate/network.hpp"
#include "chgate/pruned.hpp"
#include "chgate/train.hpp"

namespace {

using nlohmann::json;
using namespace chgate;

// Dataset for a checkpoint: --data when given, else the one it was trained on.
Dataset checkpoint_dataset(const std::string& ckpt, const std::string& data_arg,
                           bool eval_split) {
  DatasetDescriptor desc;
  if (!data_arg.empty()) {
    desc = DatasetDescriptor::parse(data_arg);
  } else {
    const json meta = read_checkpoint(ckpt).meta;
    if (meta.contains("extra") && meta["extra"].contains("config") &&
        meta["extra"]["config"].contains("dataset")) {
      desc = DatasetDescriptor::from_json(meta["extra"]["config"]["dataset"]);
    }
  }
  Dataset d = desc.load();
  return eval_split ? split_train_eval(d).eval : d;
}

TrainConfig config_from(const std::string& path) {
  return path.empty() ? TrainConfig::desk_preset() : TrainConfig::load(path);
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed,
              const std::string& out, std::optional<std::int64_t> epochs,
              bool quiet) {
  TrainConfig c = config_from(config);
  if (seed) c.seed = *seed;
  if (epochs) c.epochs = *epochs;
  if (!out.empty()) c.output_dir = out;
  c.validate();
  const TrainResult r = train(c, quiet ? nullptr : &std::cerr);
  std::cout << r.summary.to_json().dump(2) << '\n';
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data,
             const std::string& strategy, double tau, std::int64_t k,
             const std::string& combine, std::uint64_t seed, bool all,
             const std::string& predictions) {
  InferenceStrategy s;
  s.kind = parse_strategy_kind(strategy);
  s.tau = tau;
  s.k = k;
  s.combine = parse_ensemble_combine(combine);
  s.validate();
  GatedNetwork net = GatedNetwork::load(ckpt);
  const Dataset d = checkpoint_dataset(ckpt, data, !all);
  const EvalMetrics m = evaluate(net, d, s, seed);
  if (!predictions.empty()) write_predictions_csv(m, predictions);
  const json out = {{"strategy", to_string(s.kind)},
                    {"tau", s.tau},
                    {"k", s.k},
                    {"samples", d.size()},
                    {"accuracy", m.accuracy},
                    {"mean_flops", m.mean_flops},
                    {"flops_ratio", m.flops_ratio},
                    {"mean_activation", m.mean_activation()},
                    {"polarized_fraction", m.polarized_fraction()}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_prune(const std::string& ckpt, double tau, std::int64_t verify,
              const std::string& out) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValueError("tau must lie in [0,1]");
  GatedNetwork net = GatedNetwork::load(ckpt);
  const PrunedNetwork pruned = export_pruned_network(net, tau);
  json report = {{"structure", pruned.structure_json()},
                 {"original_max_flops", net.flops_model().max_flops()},
                 {"pruned_max_flops", pruned.max_flops()}};
  bool ok = true;
  if (verify > 0) {
    const VerifyReport v = verify_pruned_equivalence(net, pruned, tau, verify);
    report["verify"] = v.to_json();
    ok = v.passed;
  }
  if (!out.empty()) {
    pruned.save(out);
    report["saved"] = out;
  }
  std::cout << report.dump(2) << '\n';
  return ok ? 0 : 2;
}

int cmd_report(const std::string& ckpt, const std::string& data,
               const std::string& out) {
  GatedNetwork net = GatedNetwork::load(ckpt);
  const Dataset d = checkpoint_dataset(ckpt, data, true);
  const EvalMetrics m = evaluate(net, d, telemetry_strategy(net));
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw Error("cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os << "gate_id,block,site,channel,kind,flop_weight,p_mean,activation_rate\n";
  for (const GateInfo& g : net.gates()) {
    const auto i = static_cast<std::size_t>(g.id);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", g.flop_weight, m.p_mean[i],
                  m.gate_rates[i]);
    os << g.id << ',' << g.block << ',' << to_string(g.site) << ',' << g.channel
       << ',' << to_string(g.kind) << ',' << buf << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& config, std::optional<std::int64_t> epochs,
               const std::string& out, bool quiet) {
  TrainConfig c = config_from(config);
  if (epochs) c.epochs = *epochs;
  if (!out.empty()) c.output_dir = out;
  c.validate();
  const auto rows = run_ablation(c, quiet ? nullptr : &std::cerr);
  write_ablation_csv(rows, std::cout);
  if (!out.empty()) {
    std::ofstream f(std::filesystem::path(out) / "ablation.csv");
    write_ablation_csv(rows, f);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Channel-gated residual networks: train, evaluate, prune"};
  app.require_subcommand(1);

  std::string config, out, ckpt, data, strategy = "threshold", combine = "vote",
                                       predictions;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> epochs;
  std::uint64_t eval_seed = 0;
  double tau = 0.5;
  std::int64_t k = 1, verify = 0;
  bool quiet = false, all = false;

  auto* train_cmd = app.add_subcommand("train", "Train a gated network");
  train_cmd->add_option("--config", config, "Training config JSON");
  train_cmd->add_option("--seed", seed, "Override the seed");
  train_cmd->add_option("--epochs", epochs, "Override the epoch count");
  train_cmd->add_option("--out", out, "Output directory");
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data, "Dataset descriptor (name, JSON or file)");
  eval_cmd->add_option("--strategy", strategy,
                       "stochastic | threshold | all-on | ensemble");
  eval_cmd->add_option("--tau", tau, "Threshold");
  eval_cmd->add_option("--k", k, "Ensemble size");
  eval_cmd->add_option("--combine", combine, "vote | mean_logits");
  eval_cmd->add_option("--seed", eval_seed, "Gate noise seed");
  eval_cmd->add_flag("--all", all, "Use the whole dataset, not the eval split");
  eval_cmd->add_option("--predictions", predictions, "Write per-sample CSV");

  auto* prune_cmd = app.add_subcommand("prune", "Export a pruned network");
  prune_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  prune_cmd->add_option("--tau", tau, "Threshold");
  prune_cmd->add_option("--verify", verify, "Random inputs to compare on");
  prune_cmd->add_option("--out", out, "Write the pruned network here");

  auto* report_cmd = app.add_subcommand("report", "Per-gate CSV report");
  report_cmd->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  report_cmd->add_option("--data", data, "Dataset descriptor");
  report_cmd->add_option("--out", out, "CSV path (stdout when empty)");

  auto* ablate_cmd = app.add_subcommand("ablate", "Granularity x loss grid");
  ablate_cmd->add_option("--config", config, "Base training config JSON");
  ablate_cmd->add_option("--epochs", epochs, "Override the epoch count");
  ablate_cmd->add_option("--out", out, "Output directory");
  ablate_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(config, seed, out, epochs, quiet);
    if (*eval_cmd) {
      return cmd_eval(ckpt, data, strategy, tau, k, combine, eval_seed, all,
                      predictions);
    }
    if (*prune_cmd) return cmd_prune(ckpt, tau, verify, out);
    if (*report_cmd) return cmd_report(ckpt, data, out);
    if (*ablate_cmd) return cmd_ablate(config, epochs, out, quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ValueError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
