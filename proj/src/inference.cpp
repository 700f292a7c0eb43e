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

#include "chgate/inference.hpp"

#include <algorithm>

#include "chgate/error.hpp"

namespace chgate {

const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kStochastic: return "stochastic";
    case StrategyKind::kThreshold: return "threshold";
    case StrategyKind::kAllOn: return "all-on";
    case StrategyKind::kEnsemble: return "ensemble";
  }
  return "?";
}

const char* to_string(EnsembleCombine c) {
  return c == EnsembleCombine::kVote ? "vote" : "mean_logits";
}

StrategyKind parse_strategy_kind(const std::string& s) {
  if (s == "stochastic") return StrategyKind::kStochastic;
  if (s == "threshold") return StrategyKind::kThreshold;
  if (s == "all-on" || s == "all_on") return StrategyKind::kAllOn;
  if (s == "ensemble") return StrategyKind::kEnsemble;
  throw ConfigError("unknown inference strategy '" + s + "'");
}

EnsembleCombine parse_ensemble_combine(const std::string& s) {
  if (s == "vote") return EnsembleCombine::kVote;
  if (s == "mean_logits" || s == "mean-logits") return EnsembleCombine::kMeanLogits;
  throw ConfigError("unknown ensemble combine rule '" + s + "'");
}

void InferenceStrategy::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ValueError("tau must lie in [0,1], got " + std::to_string(tau));
  }
  if (k < 1) throw ValueError("ensemble size k must be at least 1");
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    int best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (logits[r * k + j] > logits[r * k + best]) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

namespace {

std::vector<double> pass_flops(const GatedNetwork& net, const ForwardResult& r,
                               std::int64_t n) {
  if (net.num_gates() == 0 || !r.z.defined()) {
    return std::vector<double>(static_cast<std::size_t>(n),
                               static_cast<double>(net.flops_model().max_flops()));
  }
  return net.flops_model().realized_per_sample(r.z);
}

}  // namespace

InferenceResult run_inference(GatedNetwork& net, const Tensor& x,
                              const InferenceStrategy& strategy,
                              std::uint64_t seed, std::uint64_t key) {
  strategy.validate();
  const std::int64_t n = x.dim(0);
  const std::int64_t passes =
      strategy.kind == StrategyKind::kEnsemble ? strategy.k : 1;
  InferenceResult res;
  res.flops.assign(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t pass = 0; pass < passes; ++pass) {
    ForwardOptions o;
    o.train = false;
    switch (strategy.kind) {
      case StrategyKind::kStochastic:
      case StrategyKind::kEnsemble:
        o.gates = GateMode::kSample;
        break;
      case StrategyKind::kThreshold:
        o.gates = GateMode::kThreshold;
        break;
      case StrategyKind::kAllOn:
        o.gates = GateMode::kAllOn;
        break;
    }
    o.tau = strategy.tau;
    o.noise_seed = seed;
    o.noise_key = key + static_cast<std::uint64_t>(pass);
    ForwardResult r = net.forward(x, o);
    const auto f = pass_flops(net, r, n);
    for (std::size_t i = 0; i < f.size(); ++i) {
      res.flops[i] += f[i] / static_cast<double>(passes);
    }
    res.traces.push_back(r.z);
    res.pass_logits.push_back(r.logits);
    if (pass == 0) res.probs = r.probs;
  }
  const std::int64_t k = res.pass_logits[0].dim(1);
  if (passes == 1) {
    res.logits = res.pass_logits[0];
  } else {
    res.logits = Tensor(Shape{n, k});
    for (std::int64_t i = 0; i < n * k; ++i) {
      double acc = 0.0;
      for (const auto& pl : res.pass_logits) acc += pl[i];
      res.logits[i] = static_cast<float>(acc / static_cast<double>(passes));
    }
  }
  if (strategy.kind == StrategyKind::kEnsemble &&
      strategy.combine == EnsembleCombine::kVote) {
    res.labels.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::vector<int>> votes;
    for (const auto& pl : res.pass_logits) votes.push_back(argmax_rows(pl));
    for (std::int64_t r = 0; r < n; ++r) {
      std::vector<int> count(static_cast<std::size_t>(k), 0);
      for (const auto& v : votes) ++count[static_cast<std::size_t>(v[r])];
      res.labels[static_cast<std::size_t>(r)] = static_cast<int>(
          std::max_element(count.begin(), count.end()) - count.begin());
    }
  } else {
    res.labels = argmax_rows(res.logits);
  }
  return res;
}

std::vector<int> ensemble_predict(GatedNetwork& net, const Tensor& x,
                                  std::int64_t k, EnsembleCombine combine,
                                  std::uint64_t seed, std::uint64_t key) {
  InferenceStrategy s;
  s.kind = StrategyKind::kEnsemble;
  s.k = k;
  s.combine = combine;
  return run_inference(net, x, s, seed, key).labels;
}

std::int64_t bn_recalibrate(GatedNetwork& net, const BatchSource& source,
                            std::int64_t num_batches, std::uint64_t seed,
                            GateMode gates) {
  if (num_batches < 1) throw ValueError("num_batches must be at least 1");
  if (gates == GateMode::kForced) {
    throw ValueError("batch norm recalibration cannot use forced gates");
  }
  std::int64_t used = 0;
  Tensor batch;
  while (used < num_batches && source(batch)) {
    ForwardOptions o;
    o.train = true;
    o.gates = net.num_gates() > 0 ? gates : GateMode::kNone;
    o.noise_seed = seed;
    o.noise_key = static_cast<std::uint64_t>(used);
    net.forward(batch, o);
    ++used;
  }
  if (used == 0) throw ValueError("batch norm recalibration got an empty stream");
  return used;
}

}  // namespace chgate
