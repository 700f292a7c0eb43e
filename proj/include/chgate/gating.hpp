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
#include <span>
#include <string>

#include "chgate/ops.hpp"
#include "chgate/rng.hpp"
#include "chgate/tensor.hpp"

namespace chgate {

enum class GateKind { kIndependent, kDependent };
enum class SampleMode { kHard, kSoft };
// How the gradient of a gate value reaches its logits.
//   kThroughP           dZ/d(w1-w0) := p(1-p), p = sigmoid(w1-w0)
//   kThroughSoftSample  dZ/d(w1-w0) := y(1-y)/T, y the perturbed soft sample
enum class BackwardMode { kThroughP, kThroughSoftSample };

struct GateSampling {
  float temperature = 1.0f;
  SampleMode mode = SampleMode::kHard;
  BackwardMode backward = BackwardMode::kThroughP;
};

const char* to_string(GateKind kind);
const char* to_string(SampleMode mode);
const char* to_string(BackwardMode mode);
GateKind parse_gate_kind(const std::string& s);
SampleMode parse_sample_mode(const std::string& s);
BackwardMode parse_backward_mode(const std::string& s);

// Standard Gumbel draw -ln(-ln U), U clamped to [1e-12, 1 - 1e-12].
double gumbel_sample(RngStream& rng);

// Tensor of i.i.d. standard Gumbel samples.
Tensor sample_gumbel_noise(const Shape& shape, RngStream& rng);

// Noise [N, ids.size(), 2] for a batch. Gate ids[g] draws its 2N values
// from the stream (seed, gate id, stream_key), in sample order, (off, on)
// per sample. The result therefore does not depend on which other gates
// are sampled alongside.
Tensor gate_noise(std::uint64_t seed, std::span<const std::int64_t> gate_ids,
                  std::uint64_t stream_key, std::int64_t batch);

// sigmoid(w1 - w0). Throws ValueError for non-finite logits.
double gate_probability(double w0, double w1);

// (w0, w1) = (0, ln(p/(1-p))). Throws ValueError unless 0 < p < 1.
double logit_for_probability(double p);

// On-probabilities of logits [G,2] -> [G] or [N,G,2] -> [N,G]. Untracked.
Tensor gate_probabilities(const Tensor& logits);

// Straight-through gate. logits are [G,2] (shared by every sample) or
// [N,G,2]; noise is [N,G,2]. Returns gate values [N,G]. Hard mode yields
// exactly 0 or 1 with Z = 1 iff w1 + g1 > w0 + g0.
Tensor gate_sample_straight_through(const Tensor& logits, const Tensor& noise,
                                    const GateSampling& sampling);

// Shared trunk that maps a feature map to logits for `num_gates` gates:
// global average pool, linear in->hidden, batch norm, ReLU, linear
// hidden->2*num_gates. Output column 2g is w0 of gate g, 2g+1 is w1.
class GateHead {
 public:
  GateHead() = default;
  GateHead(std::int64_t in_channels, std::int64_t hidden_channels,
           std::int64_t num_gates);

  // Kaiming-normal first layer, near-zero second layer, and second-layer
  // bias (0, logit(init_p)) so that every gate starts at probability
  // init_p.
  void initialize(RngStream& rng, double init_p);

  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t hidden_channels() const { return hidden_; }
  std::int64_t num_gates() const { return num_gates_; }

  Tensor fc1_weight, fc1_bias, bn_gamma, bn_beta, fc2_weight, fc2_bias;
  ops::BatchNormState bn;

 private:
  std::int64_t in_channels_ = 0;
  std::int64_t hidden_ = 0;
  std::int64_t num_gates_ = 0;
};

// feature_map [N,C,H,W] -> logits [N, 2*num_gates]. Throws ShapeError when
// C differs from the head's input width.
Tensor dependent_gate_logits(const Tensor& feature_map, GateHead& head,
                             ops::BnMode mode);

}  // namespace chgate
