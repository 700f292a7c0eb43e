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
#include <vector>

#include "chgate/flops.hpp"
#include "chgate/tensor.hpp"

namespace chgate {

// Sampled gate values of one batch. z is [B,G]: row j holds the gate values
// of batch element j, column i belongs to gate gate_ids[i].
struct ActivationRecord {
  Tensor z;
  std::vector<std::int64_t> gate_ids;
  std::vector<double> flop_weights;

  std::int64_t batch() const { return z.defined() ? z.dim(0) : 0; }
  std::int64_t gates() const { return z.defined() ? z.dim(1) : 0; }
  // Throws ValueError for an empty record or inconsistent sizes.
  void validate() const;
};

// Desired network-wide activation rate, 0 <= t <= 1.
struct TargetRate {
  double t = 0.5;
  explicit TargetRate(double value);
};

enum class LossKind { kBatch, kFlops, kAig };
const char* to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& s);

// (t - mean over all (sample, gate) pairs of z)^2.
Tensor batch_activation_loss(const ActivationRecord& rec, TargetRate t);

// (t - mean_j realized_flops(z_j) / max_flops)^2.
Tensor flops_activation_loss(const ActivationRecord& rec,
                             const FlopsModel& model, TargetRate t);

// (1/|G|) sum_i (t_i - mean_j z_{j,i})^2.
Tensor aig_per_gate_loss(const ActivationRecord& rec,
                         std::span<const double> targets);

// Closed-form expectation of batch_activation_loss when gate i is on
// independently per sample with probability probs[i]:
//   (t - mean p)^2 + sum p(1-p) / (|B| |G|^2).
double expected_batch_loss_analytic(std::span<const double> probs,
                                    std::int64_t batch_size, TargetRate t);

// base_wd * multiplier / num_gates. Throws ValueError when num_gates < 1.
double gate_weight_decay_coefficient(double base_wd, std::int64_t num_gates,
                                     double multiplier);

// class_loss + act_weight * act_loss.
Tensor total_training_loss(const Tensor& class_loss, const Tensor& act_loss,
                           float act_weight = 1.0f);

}  // namespace chgate
