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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chgate/checkpoint.hpp"
#include "chgate/flops.hpp"
#include "chgate/gating.hpp"
#include "chgate/ops.hpp"
#include "chgate/optim.hpp"
#include "chgate/tensor.hpp"

namespace chgate {

enum class Granularity { kPerChannel, kPerLayer };

// Mask positions of the gated bottleneck, in forward order.
enum class SiteKind { kInput, kConv1, kConv2, kOutput, kShortcut };
inline constexpr int kNumSiteKinds = 5;

const char* to_string(Granularity g);
const char* to_string(SiteKind s);
Granularity parse_granularity(const std::string& s);
SiteKind parse_site_kind(const std::string& s);

struct MaskSiteSpec {
  SiteKind site = SiteKind::kInput;
  Granularity granularity = Granularity::kPerChannel;
  GateKind kind = GateKind::kIndependent;
};

// Bottleneck block:
//   input mask -> conv1 1x1, BN, ReLU -> mask -> conv2 3x3 /stride, BN, ReLU
//   -> mask -> conv3 1x1, BN, ReLU -> output mask -> + shortcut
// The shortcut reads the unmasked block input. It is a projection
// (conv 1x1 /stride, BN, ReLU, optional shortcut mask) when the channel
// count or resolution changes, and the identity otherwise.
struct GatedBlockSpec {
  std::int64_t in_channels = 0;
  std::int64_t mid_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t stride = 1;
  std::vector<MaskSiteSpec> mask_sites;

  bool has_projection() const {
    return in_channels != out_channels || stride != 1;
  }
  std::int64_t site_channels(SiteKind s) const;
  const MaskSiteSpec* find_site(SiteKind s) const;
};

// Stem conv (3x3 by default, same padding) + BN + ReLU, the blocks, then
// global average pooling and a linear classifier.
struct NetworkSpec {
  std::int64_t in_channels = 3;
  std::int64_t image_size = 16;
  std::int64_t stem_channels = 16;
  std::int64_t stem_kernel = 3;
  std::int64_t num_classes = 4;
  std::vector<GatedBlockSpec> blocks;

  // Throws ConfigError describing the first inconsistency.
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys are errors.
  static NetworkSpec from_json(const nlohmann::json& j);

  // Desk-scale reference: stem 3->16 and blocks (16,16,16,/1),
  // (16,16,16,/2), (16,32,32,/1), without mask sites.
  static NetworkSpec reference(std::int64_t num_classes = 4,
                               std::int64_t image_size = 16,
                               std::int64_t in_channels = 3);
};

// Masks every site of every block (input, conv1, conv2, output, and the
// shortcut of projection blocks) with the given granularity and kind.
NetworkSpec with_gating(NetworkSpec spec, Granularity granularity,
                        GateKind kind);
// Removes every mask site.
NetworkSpec without_gating(NetworkSpec spec);

struct BuildOptions {
  std::uint64_t seed = 0;
  double gate_init_p = 0.8;
  std::int64_t head_hidden = 16;
  float bn_momentum = 0.1f;
  float bn_epsilon = 1e-5f;

  nlohmann::json to_json() const;
  static BuildOptions from_json(const nlohmann::json& j);
};

// Registry entry for one gate.
struct GateInfo {
  std::int64_t id = 0;
  int block = 0;
  SiteKind site = SiteKind::kInput;
  // Channel index at the site, or -1 for a per-layer gate.
  std::int64_t channel = -1;
  GateKind kind = GateKind::kIndependent;
  double flop_weight = 0.0;
};

enum class GateMode {
  kNone,       // no masks at all (the ungated network)
  kSample,     // straight-through Gumbel samples
  kThreshold,  // Z = 1 iff p > tau
  kAllOn,      // Z = 1
  kForced,     // caller-supplied Z
};

const char* to_string(GateMode m);

struct ForwardOptions {
  // Batch statistics and running-stat updates in every BN layer.
  bool train = false;
  GateMode gates = GateMode::kSample;
  GateSampling sampling;
  // Gate noise comes from the stream (noise_seed, gate id, noise_key).
  std::uint64_t noise_seed = 0;
  std::uint64_t noise_key = 0;
  double tau = 0.5;
  // [G] (shared by all samples) or [N,G] gate values for kForced.
  Tensor forced;
  // Evaluation only: never compute channels whose gate is off. Requires
  // 0/1 gate values; results are bitwise equal to the masked path.
  bool skip_off_channels = false;
};

struct ForwardResult {
  Tensor logits;  // [N, num_classes]
  Tensor z;       // [N, G] applied gate values; graph-linked when sampled
                  // under a tape. Undefined when G == 0 or mode is kNone.
  Tensor probs;   // [N, G] gate on-probabilities (untracked); undefined if G == 0
};

struct ConvBn {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  ops::BatchNormState bn;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t kernel() const { return weight.dim(2); }
};

// Gates at one mask site. Independent gates keep logits [count, 2];
// dependent gates read columns [head_offset, head_offset + count) of their
// block's gate head.
struct SiteGates {
  MaskSiteSpec spec;
  std::int64_t channels = 0;
  std::int64_t first_gate = 0;
  std::int64_t count = 0;
  Tensor logits;
  std::int64_t head_offset = 0;

  bool per_layer() const { return spec.granularity == Granularity::kPerLayer; }
};

struct GatedBlock {
  GatedBlockSpec spec;
  ConvBn conv1, conv2, conv3;
  std::optional<ConvBn> shortcut;
  std::vector<SiteGates> sites;
  std::optional<GateHead> head;
  // Index into `sites` per SiteKind, or -1.
  std::array<int, kNumSiteKinds> site_index{-1, -1, -1, -1, -1};

  const SiteGates* site(SiteKind s) const {
    const int i = site_index[static_cast<int>(s)];
    return i < 0 ? nullptr : &sites[static_cast<std::size_t>(i)];
  }
};

class GatedNetwork {
 public:
  // Throws ConfigError for an inconsistent spec.
  static GatedNetwork build(const NetworkSpec& spec,
                            const BuildOptions& options);

  GatedNetwork(GatedNetwork&&) = default;
  GatedNetwork& operator=(GatedNetwork&&) = default;
  GatedNetwork(const GatedNetwork&) = delete;
  GatedNetwork& operator=(const GatedNetwork&) = delete;

  // Deep copy of all parameters and statistics; optimizer state is reset.
  GatedNetwork clone() const;

  ForwardResult forward(const Tensor& x, const ForwardOptions& options);

  const NetworkSpec& spec() const { return spec_; }
  const BuildOptions& build_options() const { return options_; }
  std::int64_t num_gates() const {
    return static_cast<std::int64_t>(gates_.size());
  }
  const std::vector<GateInfo>& gates() const { return gates_; }
  bool has_dependent_gates() const;

  // p of every gate; only defined when all gates are independent.
  std::vector<double> independent_probabilities() const;

  std::vector<Parameter>& parameters() { return params_; }
  std::vector<Parameter*> parameter_ptrs();
  std::vector<ops::BatchNormState*> bn_states();

  const FlopsModel& flops_model() const { return flops_; }

  const ConvBn& stem() const { return stem_; }
  const std::vector<GatedBlock>& blocks() const { return blocks_; }
  const Tensor& fc_weight() const { return fc_weight_; }
  const Tensor& fc_bias() const { return fc_bias_; }

  // Every parameter and running statistic under its checkpoint name.
  // Independent gate logits appear as gate.<id>.w0 / gate.<id>.w1.
  std::vector<NamedTensor> state_tensors() const;
  // Copies values by name; throws FormatError on missing names or shape
  // mismatches.
  void load_state(const Checkpoint& ck);

  void save(const std::filesystem::path& path,
            const nlohmann::json& extra_meta = nlohmann::json::object()) const;
  static GatedNetwork load(const std::filesystem::path& path);

 private:
  GatedNetwork() = default;
  void collect_parameters();
  void build_registry_and_flops();

  NetworkSpec spec_;
  BuildOptions options_;
  ConvBn stem_;
  std::vector<GatedBlock> blocks_;
  Tensor fc_weight_, fc_bias_;
  std::vector<GateInfo> gates_;
  std::vector<Parameter> params_;
  FlopsModel flops_;
};

// Costed layers of a (possibly gated) network, shared by the gated and the
// pruned model so that both count FLOPs identically.
std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel,
                           std::int64_t stride, std::int64_t padding);

}  // namespace chgate
