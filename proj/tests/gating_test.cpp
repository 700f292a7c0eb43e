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
#include <numbers>

#include "chgate/error.hpp"
#include "chgate/gating.hpp"
#include "chgate/ops.hpp"
#include "chgate/tape.hpp"
#include "grad_check.hpp"

namespace chgate {
namespace {

using testing::check_gradients;
using testing::D;
using testing::random_tensor;
namespace sh = testing::shadow;

constexpr double kEuler = 0.57721566490153286;
// First draw of the seed-1234 test stream, recorded once.
constexpr float kGoldenFirstGumbel = 0.557104051f;

TEST(GumbelNoise, FirstSampleIsReproducible) {
  auto rng = RngStream::derive(1234, StreamFamily::kTest);
  Tensor g = sample_gumbel_noise({3}, rng);
  auto again = RngStream::derive(1234, StreamFamily::kTest);
  Tensor h = sample_gumbel_noise({3}, again);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(g[i], h[i]);
  EXPECT_EQ(g[0], kGoldenFirstGumbel);
}

TEST(GumbelNoise, MomentsMatchStandardGumbel) {
  constexpr std::int64_t n = 1'000'000;
  auto rng = RngStream::derive(99, StreamFamily::kTest);
  Tensor g = sample_gumbel_noise({n}, rng);
  double mean = 0.0;
  for (float v : g.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : g.data()) var += (v - mean) * (v - mean);
  var /= n - 1;
  const double sigma2 = std::numbers::pi * std::numbers::pi / 6.0;
  EXPECT_NEAR(mean, kEuler, 3.0 * std::sqrt(sigma2 / n));
  // Var(s^2) ~ (mu4 - sigma^4)/n with excess kurtosis 12/5.
  EXPECT_NEAR(var, sigma2, 3.0 * sigma2 * std::sqrt(4.4 / n));
}

TEST(GumbelNoise, RejectsEmptyShape) {
  auto rng = RngStream::derive(1, StreamFamily::kTest);
  EXPECT_THROW(sample_gumbel_noise({}, rng), ShapeError);
}

TEST(GateProbability, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(gate_probability(0.0, 0.0), 0.5);
  EXPECT_NEAR(gate_probability(0.0, std::log(3.0)), 0.75, 1e-15);
  EXPECT_NEAR(gate_probability(1.0, 2.0), 0.7310585786, 1e-10);
  EXPECT_THROW(gate_probability(std::nan(""), 0.0), ValueError);
  EXPECT_THROW(gate_probability(0.0, INFINITY), ValueError);
}

TEST(GateProbability, StaysInsideOpenInterval) {
  for (double d = -30.0; d <= 30.0; d += 0.5) {
    const double p = gate_probability(0.0, d);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

double on_rate(float w0, float w1, std::int64_t draws, std::uint64_t seed) {
  Tensor logits({1, 2}, {w0, w1});
  const std::int64_t ids[] = {0};
  Tensor noise = gate_noise(seed, ids, 0, draws);
  Tensor z = gate_sample_straight_through(logits, noise, GateSampling{});
  double on = 0.0;
  for (float v : z.data()) {
    EXPECT_TRUE(v == 0.0f || v == 1.0f);
    on += v;
  }
  return on / static_cast<double>(draws);
}

TEST(StraightThrough, SaturatedLogitsAlwaysOn) {
  EXPECT_EQ(on_rate(0.0f, 20.0f, 100'000, 1), 1.0);
}

TEST(StraightThrough, SymmetricLogitsHalfOn) {
  constexpr std::int64_t n = 100'000;
  EXPECT_NEAR(on_rate(0.7f, 0.7f, n, 2), 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(StraightThrough, MarginalMatchesSigmoid) {
  constexpr std::int64_t n = 100'000;
  const auto w1 = static_cast<float>(std::log(3.0));
  const double p = gate_probability(0.0, w1);
  EXPECT_NEAR(on_rate(0.0f, w1, n, 3), p, 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST(StraightThrough, HardForwardIsArgmaxOfPerturbedLogits) {
  Tensor logits({2, 2}, {0.0f, 0.3f, 1.0f, -0.5f});
  Tensor noise({2, 2, 2}, {0.1f, -0.1f, 0.0f, 0.0f, -1.0f, 0.0f, 0.2f, 2.0f});
  Tensor z = gate_sample_straight_through(logits, noise, GateSampling{});
  // sample 0: gate0 0.2 > 0.1 on; gate1 -0.5 > 1.0 off
  // sample 1: gate0 0.3 > -1.0 on; gate1 1.5 > 1.2 on
  EXPECT_EQ(z[0], 1.0f);
  EXPECT_EQ(z[1], 0.0f);
  EXPECT_EQ(z[2], 1.0f);
  EXPECT_EQ(z[3], 1.0f);
}

TEST(StraightThrough, RejectsBadArguments) {
  Tensor logits({1, 2});
  Tensor noise({1, 1, 2});
  GateSampling s;
  s.temperature = 0.0f;
  EXPECT_THROW(gate_sample_straight_through(logits, noise, s), ValueError);
  EXPECT_THROW(
      gate_sample_straight_through(Tensor({2, 2}), noise, GateSampling{}),
      ShapeError);
  Tensor bad({1, 2}, {0.0f, std::nanf("")});
  EXPECT_THROW(gate_sample_straight_through(bad, noise, GateSampling{}),
               ValueError);
}

TEST(StraightThrough, ThroughPGradientMatchesHandChain) {
  // L = (c Z - y)^2 on one gate and one sample.
  const float w0 = 0.2f, w1 = 0.9f, c = 1.7f, y = 0.4f;
  Tensor logits({1, 2}, {w0, w1});
  logits.set_requires_grad(true);
  Tensor noise({1, 1, 2}, {0.0f, 0.0f});
  Tape tape;
  TapeScope scope(tape);
  Tensor z = gate_sample_straight_through(logits, noise, GateSampling{});
  ASSERT_EQ(z[0], 1.0f);
  Tensor loss = ops::square(ops::add_scalar(ops::scale(z, c), -y));
  tape.backward(loss);
  const double p = gate_probability(w0, w1);
  const double dl_dz = 2.0 * (c * 1.0 - y) * c;
  EXPECT_NEAR(logits.grad()[1], dl_dz * p * (1 - p), 1e-6);
  EXPECT_NEAR(logits.grad()[0], -dl_dz * p * (1 - p), 1e-6);
}

TEST(StraightThrough, SharedLogitsAccumulateOverSamples) {
  Tensor logits({1, 2}, {0.0f, 0.5f});
  logits.set_requires_grad(true);
  const std::int64_t ids[] = {0};
  Tensor noise = gate_noise(7, ids, 0, 5);
  Tape tape;
  TapeScope scope(tape);
  Tensor z = gate_sample_straight_through(logits, noise, GateSampling{});
  tape.backward(ops::sum(z));
  const double p = gate_probability(0.0, 0.5);
  EXPECT_NEAR(logits.grad()[1], 5.0 * p * (1 - p), 1e-6);
}

TEST(StraightThrough, SoftSampleGradientMatchesFiniteDifferences) {
  GateSampling s;
  s.mode = SampleMode::kSoft;
  s.backward = BackwardMode::kThroughSoftSample;
  s.temperature = 0.7f;
  Tensor noise = random_tensor({3, 4, 2}, 10);
  for (const Shape& ls : {Shape{4, 2}, Shape{3, 4, 2}}) {
    Tensor logits = random_tensor(ls, 11);
    auto r = check_gradients(
        [&] {
          Tensor z = gate_sample_straight_through(logits, noise, s);
          return ops::sum(ops::mul(z, random_tensor(z.shape(), 12)));
        },
        [&](const std::vector<D>& v) {
          D z = sh::soft_gate(v[0], D(noise), s.temperature);
          return sh::dot(z, D(random_tensor(z.shape, 12)));
        },
        {logits});
    EXPECT_LT(r.max_rel_error, 1e-4) << shape_str(ls);
  }
}

TEST(StraightThrough, SamplesIndependentlyPerBatchElement) {
  // Two batch elements share one gate; the joint on-rate factorizes.
  constexpr std::int64_t draws = 100'000;
  const float w1 = 0.4f;
  const double p = gate_probability(0.0, w1);
  Tensor logits({1, 2}, {0.0f, w1});
  const std::int64_t ids[] = {3};
  double both = 0.0;
  Tensor noise = gate_noise(5, ids, 0, 2 * draws);
  Tensor z = gate_sample_straight_through(logits, noise, GateSampling{});
  for (std::int64_t i = 0; i < draws; ++i) both += z[2 * i] * z[2 * i + 1];
  both /= draws;
  const double q = p * p;
  EXPECT_NEAR(both, q, 3.0 * std::sqrt(q * (1 - q) / draws));
}

TEST(GateNoise, StreamDependsOnlyOnGateIdAndKey) {
  const std::int64_t pair[] = {5, 7};
  const std::int64_t single[] = {7};
  Tensor a = gate_noise(11, pair, 3, 4);
  Tensor b = gate_noise(11, single, 3, 4);
  for (std::int64_t n = 0; n < 4; ++n) {
    EXPECT_EQ(a[(n * 2 + 1) * 2], b[n * 2]);
    EXPECT_EQ(a[(n * 2 + 1) * 2 + 1], b[n * 2 + 1]);
  }
  Tensor c = gate_noise(11, single, 4, 4);
  EXPECT_NE(b[0], c[0]);
}

TEST(GateHead, ZeroPathGivesEvenLogits) {
  GateHead head(3, 16, 1);
  auto rng = RngStream::derive(1, StreamFamily::kTest);
  head.initialize(rng, 0.8);
  std::fill(head.fc1_weight.data().begin(), head.fc1_weight.data().end(), 0.0f);
  std::fill(head.fc2_bias.data().begin(), head.fc2_bias.data().end(), 0.0f);
  Tensor x({4, 3, 5, 5}, 0.7f);
  for (auto mode : {ops::BnMode::kTrain, ops::BnMode::kEval}) {
    Tensor l = dependent_gate_logits(x, head, mode);
    ASSERT_EQ(l.shape(), (Shape{4, 2}));
    for (std::int64_t n = 0; n < 4; ++n) {
      EXPECT_EQ(l[2 * n], 0.0f);
      EXPECT_EQ(l[2 * n + 1], 0.0f);
      EXPECT_EQ(gate_probability(l[2 * n], l[2 * n + 1]), 0.5);
    }
  }
}

TEST(GateHead, InitialProbabilityIsInitP) {
  GateHead head(4, 16, 3);
  auto rng = RngStream::derive(2, StreamFamily::kTest);
  head.initialize(rng, 0.8);
  for (std::int64_t g = 0; g < 3; ++g) {
    EXPECT_NEAR(gate_probability(head.fc2_bias[2 * g], head.fc2_bias[2 * g + 1]),
                0.8, 1e-6);
  }
}

TEST(GateHead, SpatialPermutationInvariance) {
  GateHead head(2, 8, 2);
  auto rng = RngStream::derive(3, StreamFamily::kTest);
  head.initialize(rng, 0.8);
  Tensor x = random_tensor({2, 2, 3, 3}, 20);
  Tensor y(x.shape());
  // Reverse the 9 spatial positions of every plane.
  for (std::int64_t plane = 0; plane < 4; ++plane) {
    for (std::int64_t i = 0; i < 9; ++i) y[plane * 9 + i] = x[plane * 9 + 8 - i];
  }
  Tensor a = dependent_gate_logits(x, head, ops::BnMode::kEval);
  Tensor b = dependent_gate_logits(y, head, ops::BnMode::kEval);
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(GateHead, ChannelMismatchThrows) {
  GateHead head(3, 4, 1);
  EXPECT_THROW(dependent_gate_logits(Tensor({2, 4, 2, 2}), head,
                                     ops::BnMode::kEval),
               ShapeError);
}

TEST(GateHead, GradientsMatchFiniteDifferences) {
  GateHead head(3, 5, 2);
  auto rng = RngStream::derive(4, StreamFamily::kTest);
  head.initialize(rng, 0.8);
  for (float& v : head.fc2_weight.data()) v = static_cast<float>(rng.normal());
  for (float& v : head.bn_gamma.data()) v = static_cast<float>(1 + 0.3 * rng.normal());
  Tensor x = random_tensor({6, 3, 4, 4}, 21);
  {
    // Keep hidden pre-activations away from the ReLU kink.
    Tensor h = ops::batch_norm(
        ops::linear(ops::global_avg_pool(x), head.fc1_weight, head.fc1_bias),
        head.bn_gamma, head.bn_beta, head.bn, ops::BnMode::kTrain);
    for (float v : h.data()) ASSERT_GT(std::abs(v), 0.01f);
  }
  auto r = check_gradients(
      [&] {
        ops::BatchNormState st(5);
        GateHead copy = head;
        copy.bn = st;
        Tensor l = dependent_gate_logits(x, copy, ops::BnMode::kTrain);
        return ops::sum(ops::mul(l, random_tensor(l.shape(), 22)));
      },
      [&](const std::vector<D>& v) {
        D h = sh::linear(sh::global_avg_pool(D(x)), v[0], v[1]);
        h = sh::relu(sh::batch_norm(h, v[2], v[3], 1e-5));
        D l = sh::linear(h, v[4], v[5]);
        return sh::dot(l, D(random_tensor(l.shape, 22)));
      },
      {head.fc1_weight, head.fc1_bias, head.bn_gamma, head.bn_beta,
       head.fc2_weight, head.fc2_bias});
  EXPECT_LT(r.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace chgate
