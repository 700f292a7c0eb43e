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

#include "chgate/losses.hpp"

#include <cmath>

#include "chgate/error.hpp"
#include "chgate/ops.hpp"
#include "chgate/tape.hpp"

namespace chgate {

void ActivationRecord::validate() const {
  if (!z.defined() || z.rank() != 2 || z.numel() == 0) {
    throw ValueError("activation record is empty");
  }
  if (!gate_ids.empty() &&
      static_cast<std::int64_t>(gate_ids.size()) != gates()) {
    throw ValueError("activation record has " + std::to_string(gates()) +
                     " gate columns but " + std::to_string(gate_ids.size()) +
                     " gate ids");
  }
  if (!flop_weights.empty() &&
      static_cast<std::int64_t>(flop_weights.size()) != gates()) {
    throw ValueError("activation record flop_weights length mismatch");
  }
}

TargetRate::TargetRate(double value) : t(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValueError("target rate must lie in [0,1]");
  }
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kBatch:
      return "batch";
    case LossKind::kFlops:
      return "flops";
    case LossKind::kAig:
      return "aig";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "batch") return LossKind::kBatch;
  if (s == "flops") return LossKind::kFlops;
  if (s == "aig") return LossKind::kAig;
  throw ConfigError("unknown loss kind '" + s + "'");
}

Tensor batch_activation_loss(const ActivationRecord& rec, TargetRate t) {
  rec.validate();
  Tensor rate = ops::mean(rec.z);
  return ops::square(ops::add_scalar(rate, static_cast<float>(-t.t)));
}

Tensor flops_activation_loss(const ActivationRecord& rec,
                             const FlopsModel& model, TargetRate t) {
  rec.validate();
  const std::int64_t max = model.max_flops();
  if (max <= 0) throw ValueError("network has zero max FLOPs");
  Tensor per_sample = model.realized_op(rec.z);
  Tensor ratio =
      ops::scale(ops::mean(per_sample), static_cast<float>(1.0 / max));
  return ops::square(ops::add_scalar(ratio, static_cast<float>(-t.t)));
}

Tensor aig_per_gate_loss(const ActivationRecord& rec,
                         std::span<const double> targets) {
  rec.validate();
  const std::int64_t b = rec.batch();
  const std::int64_t g = rec.gates();
  if (static_cast<std::int64_t>(targets.size()) != g) {
    throw ValueError("aig loss needs " + std::to_string(g) +
                     " targets, got " + std::to_string(targets.size()));
  }
  std::vector<double> rate(static_cast<std::size_t>(g), 0.0);
  const float* z = rec.z.ptr();
  for (std::int64_t n = 0; n < b; ++n) {
    for (std::int64_t i = 0; i < g; ++i) rate[i] += z[n * g + i];
  }
  double loss = 0.0;
  for (std::int64_t i = 0; i < g; ++i) {
    rate[i] /= static_cast<double>(b);
    const double d = targets[i] - rate[i];
    loss += d * d;
  }
  loss /= static_cast<double>(g);
  Tensor out = Tensor::scalar(static_cast<float>(loss));
  if (Tape::tracking({&rec.z})) {
    std::vector<double> tv(targets.begin(), targets.end());
    Tape::current()->record(
        out, {&rec.z},
        [z = rec.z, rate = std::move(rate), tv = std::move(tv), b,
         g](std::span<const float> gy) {
          auto gz = grad_buffer(z);
          for (std::int64_t i = 0; i < g; ++i) {
            const double d = 2.0 * (rate[i] - tv[i]) /
                             (static_cast<double>(g) * static_cast<double>(b));
            const auto di = static_cast<float>(gy[0] * d);
            for (std::int64_t n = 0; n < b; ++n) gz[n * g + i] += di;
          }
        });
  }
  return out;
}

double expected_batch_loss_analytic(std::span<const double> probs,
                                    std::int64_t batch_size, TargetRate t) {
  if (probs.empty()) throw ValueError("no gate probabilities given");
  if (batch_size < 1) throw ValueError("batch size must be positive");
  double mean = 0.0;
  double var = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValueError("gate probability outside [0,1]");
    }
    mean += p;
    var += p * (1.0 - p);
  }
  const auto g = static_cast<double>(probs.size());
  mean /= g;
  const double bias = t.t - mean;
  return bias * bias + var / (static_cast<double>(batch_size) * g * g);
}

double gate_weight_decay_coefficient(double base_wd, std::int64_t num_gates,
                                     double multiplier) {
  if (num_gates < 1) throw ValueError("gate weight decay needs >= 1 gate");
  return base_wd * multiplier / static_cast<double>(num_gates);
}

Tensor total_training_loss(const Tensor& class_loss, const Tensor& act_loss,
                           float act_weight) {
  if (class_loss.numel() != 1 || act_loss.numel() != 1) {
    throw ShapeError("total loss needs scalar components");
  }
  return ops::add(class_loss, ops::scale(act_loss, act_weight));
}

}  // namespace chgate
