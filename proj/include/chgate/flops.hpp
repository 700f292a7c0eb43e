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
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "chgate/tensor.hpp"

// FLOPs convention: a multiply-add counts as 2. Batch norm costs 2 per
// output element, ReLU 1, a residual add 1, a linear bias 1, and global
// average pooling 1 per input element. Gate masks are free.
namespace chgate {

std::int64_t conv_flops(std::int64_t cin, std::int64_t cout, std::int64_t kh,
                        std::int64_t kw, std::int64_t hout, std::int64_t wout);

// A contiguous run of gates that masks the channels at one site. A
// per-layer site has one gate that switches all `channels` together.
struct GateSite {
  std::int64_t first_gate = 0;
  std::int64_t num_gates = 0;
  std::int64_t channels = 0;
  bool per_layer = false;
};

enum class LayerKind { kConv, kLinear, kPointwise };

// One costed layer. Conv and linear layers cost
//   2 * n_in * n_out * kh * kw * hout * wout + pointwise_per_output * n_out * hout * wout
// where n_in / n_out are the active channels at the input / output sites
// (all channels when the side is ungated). Pointwise layers cost
// pointwise_per_output * cout * hout * wout and are never gated.
struct LayerCost {
  std::string layer_id;
  LayerKind kind = LayerKind::kConv;
  std::int64_t cin = 0, cout = 0, kh = 1, kw = 1, hout = 1, wout = 1;
  std::optional<GateSite> in_site;
  std::optional<GateSite> out_site;
  std::int64_t pointwise_per_output = 0;

  bool gated() const { return in_site.has_value() || out_site.has_value(); }
  std::int64_t max_flops() const;
  // Cost with real-valued active counts.
  double cost(double n_in, double n_out) const;
};

class FlopsModel {
 public:
  FlopsModel() = default;
  FlopsModel(std::vector<LayerCost> layers, std::int64_t num_gates);

  const std::vector<LayerCost>& layers() const { return layers_; }
  std::int64_t num_gates() const { return num_gates_; }

  std::int64_t max_flops() const;
  // Cost of everything no gate can switch off.
  std::int64_t ungated_floor() const;

  // FLOPs attributed to each gate; every entry is an integer and
  //   ungated_floor() + sum(flop_weights()) == max_flops().
  // When both sides of a conv are gated its product term is split evenly
  // between the input and output gates.
  std::vector<double> flop_weights() const;

  // Cost of one sample given gate values z (length num_gates). With 0/1
  // values the result is an exact integer.
  double realized(std::span<const float> z) const;
  // Per-sample costs of z [B,G]; throws ShapeError on a width mismatch.
  std::vector<double> realized_per_sample(const Tensor& z) const;
  // Expected cost when gate i is on independently with probability p[i].
  double expected(std::span<const double> p) const;
  // Per-layer expected cost under probabilities p.
  std::vector<double> expected_per_layer(std::span<const double> p) const;

  // Differentiable realized cost: z [B,G] -> [B].
  Tensor realized_op(const Tensor& z) const;

  // CSV: layer_id,Cin,Cout,Kh,Kw,Hout,Wout,max_flops,expected_flops. The
  // expected column is left empty when `p` is empty.
  void write_report_csv(std::ostream& out, std::span<const double> p) const;

 private:
  double active(const std::optional<GateSite>& site, std::int64_t full,
                std::span<const float> z) const;
  std::vector<LayerCost> layers_;
  std::int64_t num_gates_ = 0;
};

}  // namespace chgate
