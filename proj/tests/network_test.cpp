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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "chgate/error.hpp"
#include "chgate/network.hpp"
#include "chgate/ops.hpp"
#include "chgate/tape.hpp"
#include "grad_check.hpp"

namespace chgate {
namespace {

using testing::random_tensor;

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), sizeof(float) * a.numel()) == 0;
}

NetworkSpec projection_net() {
  NetworkSpec s;
  s.in_channels = 3;
  s.image_size = 8;
  s.stem_channels = 8;
  s.num_classes = 3;
  s.blocks = {{8, 4, 12, 1, {}}, {12, 4, 12, 2, {}}, {12, 8, 16, 1, {}}};
  return s;
}

// Runs a few training passes so that running statistics are not the
// trivial (0, 1) initial values.
void warm_up(GatedNetwork& net, std::uint64_t seed) {
  for (std::uint64_t i = 0; i < 3; ++i) {
    ForwardOptions o;
    o.train = true;
    o.gates = GateMode::kSample;
    o.noise_seed = seed;
    o.noise_key = i;
    Tensor x = random_tensor({6, net.spec().in_channels, net.spec().image_size,
                              net.spec().image_size},
                             seed + i);
    net.forward(x, o);
  }
}

Tensor random_binary(Shape shape, std::uint64_t seed, double p_on) {
  Tensor t(std::move(shape));
  RngStream rng = RngStream::derive(seed, StreamFamily::kTest, {99});
  for (float& v : t.data()) v = rng.uniform() < p_on ? 1.0f : 0.0f;
  return t;
}

TEST(NetworkSpecTest, ReferenceGateCounts) {
  const NetworkSpec ref = NetworkSpec::reference();
  GatedNetwork ch = GatedNetwork::build(
      with_gating(ref, Granularity::kPerChannel, GateKind::kIndependent), {});
  EXPECT_EQ(ch.num_gates(), (16 + 16 + 16 + 16) + (16 + 16 + 16 + 16 + 16) +
                                (16 + 32 + 32 + 32 + 32));
  std::int64_t conv1_block0 = 0;
  for (const auto& g : ch.gates()) {
    if (g.block == 0 && g.site == SiteKind::kConv1) ++conv1_block0;
  }
  EXPECT_EQ(conv1_block0, 16);
  GatedNetwork layer = GatedNetwork::build(
      with_gating(ref, Granularity::kPerLayer, GateKind::kIndependent), {});
  EXPECT_EQ(layer.num_gates(), 4 + 5 + 5);
}

TEST(NetworkSpecTest, PerLayerFiveSitesPerBlockGivesFifteenGates) {
  GatedNetwork net = GatedNetwork::build(
      with_gating(projection_net(), Granularity::kPerLayer,
                  GateKind::kIndependent),
      {});
  EXPECT_EQ(net.num_gates(), 15);
  for (std::int64_t i = 0; i < net.num_gates(); ++i) {
    EXPECT_EQ(net.gates()[static_cast<std::size_t>(i)].id, i);
    EXPECT_EQ(net.gates()[static_cast<std::size_t>(i)].channel, -1);
  }
}

TEST(NetworkSpecTest, FlopWeightsPlusFloorEqualMax) {
  for (auto gran : {Granularity::kPerChannel, Granularity::kPerLayer}) {
    for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
      GatedNetwork net = GatedNetwork::build(
          with_gating(NetworkSpec::reference(), gran, kind), {});
      double total = static_cast<double>(net.flops_model().ungated_floor());
      for (const auto& g : net.gates()) total += g.flop_weight;
      EXPECT_EQ(total, static_cast<double>(net.flops_model().max_flops()));
    }
  }
}

TEST(NetworkSpecTest, JsonRoundTripAndStrictKeys) {
  NetworkSpec s = with_gating(NetworkSpec::reference(), Granularity::kPerLayer,
                              GateKind::kDependent);
  const auto j = s.to_json();
  EXPECT_EQ(NetworkSpec::from_json(j).to_json(), j);
  auto bad = j;
  bad["depth"] = 3;
  EXPECT_THROW(NetworkSpec::from_json(bad), ConfigError);
  auto bad_block = j;
  bad_block["blocks"][0]["width"] = 3;
  EXPECT_THROW(NetworkSpec::from_json(bad_block), ConfigError);
}

TEST(NetworkSpecTest, InconsistentSpecsRejected) {
  NetworkSpec s = NetworkSpec::reference();
  s.blocks[1].in_channels = 8;
  EXPECT_THROW(GatedNetwork::build(s, {}), ConfigError);
  s = NetworkSpec::reference();
  s.blocks[0].mask_sites.push_back(
      {SiteKind::kShortcut, Granularity::kPerChannel, GateKind::kIndependent});
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::reference();
  s.blocks[0].stride = 3;
  EXPECT_THROW(s.validate(), ConfigError);
  s = NetworkSpec::reference();
  s.blocks[0].mask_sites = {
      {SiteKind::kInput, Granularity::kPerChannel, GateKind::kIndependent},
      {SiteKind::kInput, Granularity::kPerLayer, GateKind::kIndependent}};
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(NetworkForwardTest, AllOnEqualsUngatedExactly) {
  for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
    GatedNetwork net = GatedNetwork::build(
        with_gating(NetworkSpec::reference(), Granularity::kPerChannel, kind),
        {.seed = 3});
    warm_up(net, 11);
    Tensor x = random_tensor({5, 3, 16, 16}, 12);
    ForwardOptions none;
    none.gates = GateMode::kNone;
    ForwardOptions on;
    on.gates = GateMode::kAllOn;
    ForwardOptions forced;
    forced.gates = GateMode::kForced;
    forced.forced = Tensor(Shape{net.num_gates()}, 1.0f);
    const Tensor ref = net.forward(x, none).logits;
    EXPECT_TRUE(bitwise_equal(net.forward(x, on).logits, ref));
    EXPECT_TRUE(bitwise_equal(net.forward(x, forced).logits, ref));
  }
}

TEST(NetworkForwardTest, OutputAndShortcutOffGiveZeroBlockOutput) {
  NetworkSpec s;
  s.in_channels = 3;
  s.image_size = 8;
  s.stem_channels = 4;
  s.num_classes = 3;
  s.blocks = {{4, 4, 6, 2, {}}};
  GatedNetwork net = GatedNetwork::build(
      with_gating(s, Granularity::kPerChannel, GateKind::kIndependent),
      {.seed = 5});
  warm_up(net, 21);
  // The classifier bias is all that survives a zero feature map.
  Tensor bias = net.fc_bias();
  bias[0] = 0.25f;
  bias[1] = -1.5f;
  bias[2] = 3.0f;
  Tensor z = random_binary({4, net.num_gates()}, 22, 0.5);
  for (const auto& g : net.gates()) {
    if (g.site == SiteKind::kOutput || g.site == SiteKind::kShortcut) {
      for (std::int64_t r = 0; r < 4; ++r) z[r * net.num_gates() + g.id] = 0.0f;
    }
  }
  ForwardOptions o;
  o.gates = GateMode::kForced;
  o.forced = z;
  Tensor logits = net.forward(random_tensor({4, 3, 8, 8}, 23), o).logits;
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t k = 0; k < 3; ++k) {
      EXPECT_EQ(logits[r * 3 + k], bias[k]);
    }
  }
}

TEST(NetworkForwardTest, SkipComputationMatchesComputeThenZeroBitwise) {
  for (auto gran : {Granularity::kPerChannel, Granularity::kPerLayer}) {
    for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
      GatedNetwork net = GatedNetwork::build(
          with_gating(NetworkSpec::reference(), gran, kind), {.seed = 7});
      warm_up(net, 31);
      Tensor x = random_tensor({6, 3, 16, 16}, 32);
      for (std::uint64_t trial = 0; trial < 4; ++trial) {
        ForwardOptions o;
        o.gates = GateMode::kForced;
        o.forced = random_binary({6, net.num_gates()}, 40 + trial, 0.6);
        const Tensor masked = net.forward(x, o).logits;
        o.skip_off_channels = true;
        EXPECT_TRUE(bitwise_equal(net.forward(x, o).logits, masked));
      }
      ForwardOptions s;
      s.gates = GateMode::kSample;
      s.noise_seed = 50;
      const Tensor sampled = net.forward(x, s).logits;
      s.skip_off_channels = true;
      EXPECT_TRUE(bitwise_equal(net.forward(x, s).logits, sampled));
      ForwardOptions t;
      t.gates = GateMode::kThreshold;
      t.tau = 0.5;
      const Tensor thr = net.forward(x, t).logits;
      t.skip_off_channels = true;
      EXPECT_TRUE(bitwise_equal(net.forward(x, t).logits, thr));
    }
  }
}

TEST(NetworkForwardTest, SkipRejectsSoftGatesAndTraining) {
  GatedNetwork net = GatedNetwork::build(
      with_gating(NetworkSpec::reference(), Granularity::kPerChannel,
                  GateKind::kIndependent),
      {});
  Tensor x = random_tensor({2, 3, 16, 16}, 1);
  ForwardOptions o;
  o.gates = GateMode::kForced;
  o.forced = Tensor(Shape{net.num_gates()}, 0.5f);
  o.skip_off_channels = true;
  EXPECT_THROW(net.forward(x, o), ValueError);
  o.forced = Tensor(Shape{net.num_gates()}, 1.0f);
  o.train = true;
  EXPECT_THROW(net.forward(x, o), ValueError);
}

TEST(NetworkForwardTest, ThresholdTiesAreOffAndTauOneTurnsEverythingOff) {
  GatedNetwork net = GatedNetwork::build(
      with_gating(NetworkSpec::reference(), Granularity::kPerChannel,
                  GateKind::kIndependent),
      {.seed = 9});
  warm_up(net, 61);
  // Every logit pair equal: p == 0.5 exactly.
  for (auto* p : net.parameter_ptrs()) {
    if (p->is_gate) std::fill(p->tensor.data().begin(), p->tensor.data().end(), 0.0f);
  }
  Tensor x = random_tensor({3, 3, 16, 16}, 62);
  ForwardOptions zero;
  zero.gates = GateMode::kForced;
  zero.forced = Tensor(Shape{net.num_gates()}, 0.0f);
  const Tensor off = net.forward(x, zero).logits;
  ForwardOptions t;
  t.gates = GateMode::kThreshold;
  t.tau = 0.5;
  ForwardResult r = net.forward(x, t);
  for (float v : r.z.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(bitwise_equal(r.logits, off));

  GatedNetwork fresh = GatedNetwork::build(
      with_gating(NetworkSpec::reference(), Granularity::kPerChannel,
                  GateKind::kIndependent),
      {.seed = 9, .gate_init_p = 0.999});
  t.tau = 1.0;
  r = fresh.forward(x, t);
  for (float v : r.z.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_TRUE(bitwise_equal(r.logits, fresh.forward(x, zero).logits));
  t.tau = 1.5;
  EXPECT_THROW(fresh.forward(x, t), ValueError);
}

TEST(NetworkForwardTest, InitialProbabilitiesMatchInitP) {
  for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
    GatedNetwork net = GatedNetwork::build(
        with_gating(NetworkSpec::reference(), Granularity::kPerChannel, kind),
        {.seed = 2, .gate_init_p = 0.8});
    // Train mode normalizes the head's hidden layer with batch statistics.
    ForwardOptions o;
    o.train = true;
    ForwardResult r = net.forward(random_tensor({8, 3, 16, 16}, 3), o);
    const double tol = kind == GateKind::kIndependent ? 1e-6 : 0.05;
    for (float p : r.probs.data()) EXPECT_NEAR(p, 0.8, tol);
  }
}

TEST(MaskTest, LinearityForBinaryAndRealGates) {
  Tensor f = random_tensor({3, 5, 4, 4}, 70);
  Tensor z1 = random_binary({3, 5}, 71, 0.5);
  Tensor z2 = random_binary({3, 5}, 72, 0.5);
  Tensor lhs = ops::add(ops::channel_mask(f, z1), ops::channel_mask(f, z2));
  Tensor rhs = ops::channel_mask(f, ops::add(z1, z2));
  EXPECT_TRUE(bitwise_equal(lhs, rhs));
  Tensor r1 = random_tensor({3, 5}, 73);
  Tensor r2 = random_tensor({3, 5}, 74);
  lhs = ops::add(ops::channel_mask(f, r1), ops::channel_mask(f, r2));
  rhs = ops::channel_mask(f, ops::add(r1, r2));
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    EXPECT_NEAR(lhs[i], rhs[i], 1e-5 * (1.0 + std::abs(rhs[i])));
  }
}

TEST(MaskTest, SingleChannelMaskEqualsHandSlicedConv) {
  Tensor x = random_tensor({2, 4, 6, 6}, 80);
  Tensor w = random_tensor({5, 4, 3, 3}, 81);
  Tensor z(Shape{4}, 0.0f);
  z[0] = 1.0f;
  Tensor masked = ops::conv2d(ops::channel_mask(x, z), w, 1, 1);
  Tensor xs(Shape{2, 1, 6, 6});
  for (std::int64_t n = 0; n < 2; ++n) {
    std::copy_n(x.ptr() + n * 4 * 36, 36, xs.ptr() + n * 36);
  }
  Tensor ws(Shape{5, 1, 3, 3});
  for (std::int64_t o = 0; o < 5; ++o) {
    std::copy_n(w.ptr() + o * 4 * 9, 9, ws.ptr() + o * 9);
  }
  Tensor sliced = ops::conv2d(xs, ws, 1, 1);
  EXPECT_TRUE(bitwise_equal(masked, sliced));
  Tensor only0 = ops::channel_mask(x, z);
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 1; c < 4; ++c) {
      for (std::int64_t i = 0; i < 36; ++i) {
        EXPECT_EQ(only0[(n * 4 + c) * 36 + i], 0.0f);
      }
    }
  }
}

TEST(MaskTest, ChannelMismatchIsAnError) {
  Tensor f = random_tensor({2, 5, 3, 3}, 90);
  EXPECT_THROW(ops::channel_mask(f, Tensor(Shape{4}, 1.0f)), ShapeError);
  EXPECT_THROW(ops::channel_mask(f, Tensor(Shape{2, 4}, 1.0f)), ShapeError);
}

TEST(NetworkGradientTest, OffChannelBlocksGradientToItsKernelSlices) {
  GatedNetwork net = GatedNetwork::build(
      with_gating(NetworkSpec::reference(), Granularity::kPerChannel,
                  GateKind::kIndependent),
      {.seed = 13});
  const std::int64_t c = 5;
  Tensor z(Shape{net.num_gates()}, 1.0f);
  for (const auto& g : net.gates()) {
    if (g.block == 1 && g.site == SiteKind::kConv1 && g.channel == c) {
      z[g.id] = 0.0f;
    }
  }
  auto params = net.parameter_ptrs();
  zero_grads(params);
  {
    Tape tape;
    TapeScope scope(tape);
    ForwardOptions o;
    o.train = true;
    o.gates = GateMode::kForced;
    o.forced = z;
    Tensor x = random_tensor({4, 3, 16, 16}, 14);
    const int labels[] = {0, 1, 2, 3};
    Tensor loss = ops::cross_entropy(net.forward(x, o).logits, labels);
    tape.backward(loss);
  }
  const auto& blk = net.blocks()[1];
  const Tensor& w1 = blk.conv1.weight;
  ASSERT_TRUE(w1.has_grad());
  const std::int64_t row = w1.numel() / w1.dim(0);
  double other = 0.0;
  for (std::int64_t i = 0; i < w1.numel(); ++i) {
    if (i / row == c) {
      EXPECT_EQ(w1.grad()[i], 0.0f);
    } else {
      other += std::abs(w1.grad()[i]);
    }
  }
  EXPECT_GT(other, 0.0);
  EXPECT_EQ(blk.conv1.gamma.grad()[c], 0.0f);
  EXPECT_EQ(blk.conv1.beta.grad()[c], 0.0f);
  const Tensor& w2 = blk.conv2.weight;
  const std::int64_t area = w2.dim(2) * w2.dim(3);
  for (std::int64_t o = 0; o < w2.dim(0); ++o) {
    for (std::int64_t i = 0; i < area; ++i) {
      EXPECT_EQ(w2.grad()[(o * w2.dim(1) + c) * area + i], 0.0f);
    }
  }
}

TEST(NetworkGradientTest, SampledGatesReceiveGradient) {
  for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
    GatedNetwork net = GatedNetwork::build(
        with_gating(NetworkSpec::reference(), Granularity::kPerChannel, kind),
        {.seed = 15});
    auto params = net.parameter_ptrs();
    zero_grads(params);
    Tape tape;
    TapeScope scope(tape);
    ForwardOptions o;
    o.train = true;
    o.noise_seed = 16;
    Tensor x = random_tensor({4, 3, 16, 16}, 17);
    const int labels[] = {0, 1, 2, 3};
    ForwardResult r = net.forward(x, o);
    ASSERT_EQ(r.z.shape(), (Shape{4, net.num_gates()}));
    Tensor loss = ops::add(ops::cross_entropy(r.logits, labels),
                           ops::square(ops::mean(r.z)));
    tape.backward(loss);
    double gate_grad = 0.0;
    for (auto* p : params) {
      const bool gate_param =
          p->is_gate || p->name.rfind("gate.", 0) == 0;
      if (!gate_param || !p->tensor.has_grad()) continue;
      for (float g : p->tensor.grad()) gate_grad += std::abs(g);
    }
    EXPECT_GT(gate_grad, 0.0) << to_string(kind);
  }
}

TEST(NetworkStateTest, SaveLoadAndCloneReproduceLogits) {
  for (auto kind : {GateKind::kIndependent, GateKind::kDependent}) {
    GatedNetwork net = GatedNetwork::build(
        with_gating(NetworkSpec::reference(), Granularity::kPerChannel, kind),
        {.seed = 19});
    warm_up(net, 20);
    const auto path = std::filesystem::temp_directory_path() /
                      ("chgate_net_" + std::string(to_string(kind)) + ".ckpt");
    net.save(path, {{"note", "x"}});
    GatedNetwork loaded = GatedNetwork::load(path);
    GatedNetwork copy = net.clone();
    Tensor x = random_tensor({3, 3, 16, 16}, 21);
    ForwardOptions o;
    o.gates = GateMode::kSample;
    o.noise_seed = 22;
    const Tensor ref = net.forward(x, o).logits;
    EXPECT_TRUE(bitwise_equal(loaded.forward(x, o).logits, ref));
    EXPECT_TRUE(bitwise_equal(copy.forward(x, o).logits, ref));
    copy.parameters()[0].tensor[0] += 1.0f;
    EXPECT_TRUE(bitwise_equal(net.forward(x, o).logits, ref));
    std::filesystem::remove(path);
  }
}

TEST(NetworkStateTest, IndependentGatesUseScalarCheckpointNames) {
  GatedNetwork net = GatedNetwork::build(
      with_gating(NetworkSpec::reference(), Granularity::kPerLayer,
                  GateKind::kIndependent),
      {});
  int found = 0;
  for (const auto& nt : net.state_tensors()) {
    if (nt.name == "gate.0.w0" || nt.name == "gate.13.w1") {
      EXPECT_EQ(nt.tensor.shape(), Shape{1});
      ++found;
    }
  }
  EXPECT_EQ(found, 2);
}

}  // namespace
}  // namespace chgate
