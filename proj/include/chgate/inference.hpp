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
#include <functional>
#include <string>
#include <vector>

#include "chgate/network.hpp"
#include "chgate/tensor.hpp"

namespace chgate {

enum class StrategyKind { kStochastic, kThreshold, kAllOn, kEnsemble };
enum class EnsembleCombine { kVote, kMeanLogits };

const char* to_string(StrategyKind k);
const char* to_string(EnsembleCombine c);
StrategyKind parse_strategy_kind(const std::string& s);
EnsembleCombine parse_ensemble_combine(const std::string& s);

struct InferenceStrategy {
  StrategyKind kind = StrategyKind::kThreshold;
  double tau = 0.5;
  std::int64_t k = 1;
  EnsembleCombine combine = EnsembleCombine::kVote;

  // Throws ValueError for tau outside [0,1] or k < 1.
  void validate() const;
};

struct InferenceResult {
  Tensor logits;                 // [N,K]; mean over passes for ensembles
  std::vector<int> labels;       // argmax, or the vote for ensembles
  std::vector<double> flops;     // realized FLOPs per sample (pass mean)
  std::vector<Tensor> traces;    // gate values [N,G] per pass; undefined if G = 0
  Tensor probs;                  // gate probabilities [N,G], first pass
  std::vector<Tensor> pass_logits;
};

// Eval-mode inference. Stochastic passes draw gate noise from
// (seed, gate id, key + pass index), so an ensemble of k = 1 is the
// stochastic pass with the same seed and key.
InferenceResult run_inference(GatedNetwork& net, const Tensor& x,
                              const InferenceStrategy& strategy,
                              std::uint64_t seed, std::uint64_t key = 0);

std::vector<int> ensemble_predict(GatedNetwork& net, const Tensor& x,
                                  std::int64_t k, EnsembleCombine combine,
                                  std::uint64_t seed, std::uint64_t key = 0);

// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

// Yields the next batch into `out`, or returns false when exhausted.
using BatchSource = std::function<bool(Tensor& out)>;

// Re-estimates BN running statistics with train-mode forwards under the
// given gate mode (sampled gates by default, or kAllOn / kThreshold). No
// parameter changes. Throws ValueError when the source yields no batch or
// the mode needs caller-supplied gates. Returns the number of batches used.
std::int64_t bn_recalibrate(GatedNetwork& net, const BatchSource& source,
                            std::int64_t num_batches = 200,
                            std::uint64_t seed = 0,
                            GateMode gates = GateMode::kSample);

}  // namespace chgate
