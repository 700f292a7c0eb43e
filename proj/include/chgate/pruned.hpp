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
#include <vector>

#include <nlohmann/json.hpp>

#include "chgate/flops.hpp"
#include "chgate/network.hpp"
#include "chgate/tensor.hpp"

namespace chgate {

// Conv + BN + ReLU whose weight keeps only some output channels and reads
// only some input channels. Index lists refer to the channels of the
// original layer.
struct PrunedConv {
  Tensor weight;  // [out_keep.size(), in_keep.size(), k, k]
  Tensor gamma, beta, running_mean, running_var;
  float epsilon = 1e-5f;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::vector<std::int64_t> in_keep;
  std::vector<std::int64_t> out_keep;
};

// A bottleneck with gates removed. The residual sum keeps its full width:
// the main path and a projection shortcut write their kept channels into
// zero-filled full-width tensors before the add.
struct PrunedBlock {
  std::int64_t in_channels = 0;
  std::int64_t mid_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  PrunedConv conv1, conv2, conv3;
  std::optional<PrunedConv> shortcut;
};

class PrunedNetwork {
 public:
  PrunedNetwork() = default;

  // Deterministic eval-mode forward: x [N,C,S,S] -> logits [N,K].
  Tensor forward(const Tensor& x) const;

  FlopsModel flops_model() const;
  std::int64_t max_flops() const { return flops_model().max_flops(); }

  // Structure (widths and kept-index lists) as JSON.
  nlohmann::json structure_json() const;
  std::vector<NamedTensor> state_tensors() const;

  void save(const std::filesystem::path& path) const;
  static PrunedNetwork load(const std::filesystem::path& path);

  std::int64_t in_channels = 3;
  std::int64_t image_size = 16;
  std::int64_t num_classes = 0;
  PrunedConv stem;
  std::vector<PrunedBlock> blocks;
  Tensor fc_weight, fc_bias;
};

// Physically removes every channel whose gate probability is <= tau.
// Requires data-independent gates (ValueError otherwise). Throws
// ValueError listing every layer that would lose all of its channels.
PrunedNetwork export_pruned_network(const GatedNetwork& net, double tau);

struct VerifyReport {
  std::int64_t inputs = 0;
  double tau = 0.5;
  double tolerance = 1e-5;
  double max_abs_diff = 0.0;
  std::int64_t label_agreement = 0;
  std::int64_t original_max_flops = 0;
  std::int64_t pruned_max_flops = 0;
  // Realized cost of the original network under the threshold gates.
  double thresholded_flops = 0.0;
  bool passed = false;

  nlohmann::json to_json() const;
};

// Compares pruned logits with threshold-tau masked logits of the original
// on `n` seeded random inputs. Throws ShapeError when the outputs differ
// in shape.
VerifyReport verify_pruned_equivalence(GatedNetwork& original,
                                       const PrunedNetwork& pruned, double tau,
                                       std::int64_t n, double tol = 1e-5,
                                       std::uint64_t seed = 0);

}  // namespace chgate
