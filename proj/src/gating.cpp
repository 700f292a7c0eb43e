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

#include "chgate/gating.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "chgate/error.hpp"
#include "chgate/tape.hpp"

namespace chgate {

const char* to_string(GateKind kind) {
  return kind == GateKind::kIndependent ? "independent" : "dependent";
}

const char* to_string(SampleMode mode) {
  return mode == SampleMode::kHard ? "hard" : "soft";
}

const char* to_string(BackwardMode mode) {
  return mode == BackwardMode::kThroughP ? "through_p" : "through_soft_sample";
}

GateKind parse_gate_kind(const std::string& s) {
  if (s == "independent") return GateKind::kIndependent;
  if (s == "dependent") return GateKind::kDependent;
  throw ConfigError("unknown gate kind '" + s + "'");
}

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "hard") return SampleMode::kHard;
  if (s == "soft") return SampleMode::kSoft;
  throw ConfigError("unknown sample mode '" + s + "'");
}

BackwardMode parse_backward_mode(const std::string& s) {
  if (s == "through_p") return BackwardMode::kThroughP;
  if (s == "through_soft_sample") return BackwardMode::kThroughSoftSample;
  throw ConfigError("unknown gate backward mode '" + s + "'");
}

double gumbel_sample(RngStream& rng) {
  const double u = std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12);
  return -std::log(-std::log(u));
}

Tensor sample_gumbel_noise(const Shape& shape, RngStream& rng) {
  if (shape.empty()) throw ShapeError("gumbel noise shape is empty");
  Tensor out(shape);
  for (float& v : out.data()) v = static_cast<float>(gumbel_sample(rng));
  return out;
}

Tensor gate_noise(std::uint64_t seed, std::span<const std::int64_t> gate_ids,
                  std::uint64_t stream_key, std::int64_t batch) {
  const auto g_count = static_cast<std::int64_t>(gate_ids.size());
  Tensor out(Shape{batch, g_count, 2});
  float* p = out.ptr();
  for (std::int64_t g = 0; g < g_count; ++g) {
    auto rng = RngStream::derive(
        seed, StreamFamily::kGateNoise,
        {static_cast<std::uint64_t>(gate_ids[g]), stream_key});
    for (std::int64_t n = 0; n < batch; ++n) {
      p[(n * g_count + g) * 2] = static_cast<float>(gumbel_sample(rng));
      p[(n * g_count + g) * 2 + 1] = static_cast<float>(gumbel_sample(rng));
    }
  }
  return out;
}

double gate_probability(double w0, double w1) {
  if (!std::isfinite(w0) || !std::isfinite(w1)) {
    throw ValueError("gate logits must be finite");
  }
  return 1.0 / (1.0 + std::exp(w0 - w1));
}

double logit_for_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ValueError("gate probability must lie strictly inside (0,1)");
  }
  return std::log(p / (1.0 - p));
}

Tensor gate_probabilities(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.empty() || s.back() != 2 || (s.size() != 2 && s.size() != 3)) {
    throw ShapeError("gate logits must be [G,2] or [N,G,2], got " +
                     shape_str(s));
  }
  Shape out_shape(s.begin(), s.end() - 1);
  Tensor out(out_shape);
  const float* l = logits.ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<float>(gate_probability(l[2 * i], l[2 * i + 1]));
  }
  return out;
}

Tensor gate_sample_straight_through(const Tensor& logits, const Tensor& noise,
                                    const GateSampling& sampling) {
  if (!(sampling.temperature > 0.0f)) {
    throw ValueError("gate temperature must be positive");
  }
  const Shape& ls = logits.shape();
  const Shape& ns = noise.shape();
  if (ns.size() != 3 || ns[2] != 2) {
    throw ShapeError("gate noise must be [N,G,2], got " + shape_str(ns));
  }
  const std::int64_t batch = ns[0];
  const std::int64_t gates = ns[1];
  const bool shared = ls.size() == 2;
  if (shared ? (ls[0] != gates || ls[1] != 2)
             : (ls.size() != 3 || ls != ns)) {
    throw ShapeError("gate logits " + shape_str(ls) +
                     " do not match noise " + shape_str(ns));
  }

  Tensor z(Shape{batch, gates});
  // Local derivative dZ/d(w1 - w0) for every (sample, gate).
  std::vector<float> slope(static_cast<std::size_t>(batch * gates));
  const float* l = logits.ptr();
  const float* g = noise.ptr();
  const float temp = sampling.temperature;
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t k = 0; k < gates; ++k) {
      const std::int64_t li = shared ? k : n * gates + k;
      const float w0 = l[2 * li];
      const float w1 = l[2 * li + 1];
      if (!std::isfinite(w0) || !std::isfinite(w1)) {
        throw ValueError("non-finite gate logit at gate " + std::to_string(k));
      }
      const float g0 = g[(n * gates + k) * 2];
      const float g1 = g[(n * gates + k) * 2 + 1];
      const float on = w1 + g1;
      const float off = w0 + g0;
      const double soft =
          1.0 / (1.0 + std::exp((static_cast<double>(off) - on) / temp));
      const std::int64_t zi = n * gates + k;
      z[zi] = sampling.mode == SampleMode::kHard
                  ? (on > off ? 1.0f : 0.0f)
                  : static_cast<float>(soft);
      if (sampling.backward == BackwardMode::kThroughP) {
        const double p = gate_probability(w0, w1);
        slope[zi] = static_cast<float>(p * (1.0 - p));
      } else {
        slope[zi] = static_cast<float>(soft * (1.0 - soft) / temp);
      }
    }
  }

  if (Tape::tracking({&logits})) {
    Tape::current()->record(
        z, {&logits},
        [logits, slope = std::move(slope), batch, gates,
         shared](std::span<const float> gz) {
          auto gl = grad_buffer(logits);
          for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t k = 0; k < gates; ++k) {
              const std::int64_t zi = n * gates + k;
              const std::int64_t li = shared ? k : zi;
              const float d = gz[zi] * slope[zi];
              gl[2 * li] -= d;
              gl[2 * li + 1] += d;
            }
          }
        });
  }
  return z;
}

GateHead::GateHead(std::int64_t in_channels, std::int64_t hidden_channels,
                   std::int64_t num_gates)
    : fc1_weight(Shape{hidden_channels, in_channels}),
      fc1_bias(Shape{hidden_channels}),
      bn_gamma(Shape{hidden_channels}, 1.0f),
      bn_beta(Shape{hidden_channels}),
      fc2_weight(Shape{2 * num_gates, hidden_channels}),
      fc2_bias(Shape{2 * num_gates}),
      bn(hidden_channels),
      in_channels_(in_channels),
      hidden_(hidden_channels),
      num_gates_(num_gates) {}

void GateHead::initialize(RngStream& rng, double init_p) {
  const double std1 = std::sqrt(2.0 / static_cast<double>(in_channels_));
  for (float& v : fc1_weight.data()) v = static_cast<float>(std1 * rng.normal());
  for (float& v : fc2_weight.data()) v = static_cast<float>(0.01 * rng.normal());
  std::fill(fc1_bias.data().begin(), fc1_bias.data().end(), 0.0f);
  std::fill(bn_gamma.data().begin(), bn_gamma.data().end(), 1.0f);
  std::fill(bn_beta.data().begin(), bn_beta.data().end(), 0.0f);
  const auto on = static_cast<float>(logit_for_probability(init_p));
  for (std::int64_t g = 0; g < num_gates_; ++g) {
    fc2_bias[2 * g] = 0.0f;
    fc2_bias[2 * g + 1] = on;
  }
}

Tensor dependent_gate_logits(const Tensor& feature_map, GateHead& head,
                             ops::BnMode mode) {
  if (feature_map.rank() != 4) {
    throw ShapeError("gate head input must be [N,C,H,W], got " +
                     shape_str(feature_map.shape()));
  }
  if (feature_map.dim(1) != head.in_channels()) {
    throw ShapeError("gate head expects " + std::to_string(head.in_channels()) +
                     " channels, got " + std::to_string(feature_map.dim(1)));
  }
  Tensor pooled = ops::global_avg_pool(feature_map);
  Tensor h = ops::linear(pooled, head.fc1_weight, head.fc1_bias);
  h = ops::batch_norm(h, head.bn_gamma, head.bn_beta, head.bn, mode);
  h = ops::relu(h);
  return ops::linear(h, head.fc2_weight, head.fc2_bias);
}

}  // namespace chgate
