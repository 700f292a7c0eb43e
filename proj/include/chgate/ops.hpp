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
#include <vector>

#include "chgate/tensor.hpp"

// Differentiable primitives. Every op records itself on the current tape
// (see TapeScope) when at least one input requires a gradient; otherwise it
// is a plain forward computation.
namespace chgate::ops {

enum class BnMode { kTrain, kEval };

// Per-channel running statistics of a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float epsilon = 1e-5f;

  explicit BatchNormState(std::int64_t channels = 1);
  std::int64_t channels() const { return running_mean.numel(); }
};

// Eval-mode affine coefficients y = x * scale + shift for one channel.
// Shared by every eval-mode path so that they agree bitwise.
struct BnAffine {
  float scale;
  float shift;
};
BnAffine bn_eval_affine(float gamma, float beta, float mean, float var,
                        float epsilon);

inline float relu_value(float v) { return v > 0.0f ? v : 0.0f; }

// input [N,Cin,H,W], kernel [Cout,Cin,Kh,Kw] -> [N,Cout,Hout,Wout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::int64_t stride,
              std::int64_t padding);

// input [N,C,H,W] or [N,C]. Train mode normalizes with the (biased) batch
// variance and folds the unbiased variance into the running estimate.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode);

Tensor relu(const Tensor& x);

// features [N,C,H,W] times z broadcast over H,W. z is [N,C] (per sample),
// [C] (shared across the batch) or [N,1] (one gate for the whole layer).
Tensor channel_mask(const Tensor& features, const Tensor& z);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float c);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);

// x [N,In], weight [Out,In], bias [Out] -> [N,Out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Mean softmax cross-entropy of logits [N,K] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor reshape(const Tensor& x, Shape shape);

// Columns [begin,end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end);

// Concatenates rank-2 tensors with equal row counts along columns.
Tensor concat_cols(std::span<const Tensor> parts);

}  // namespace chgate::ops
