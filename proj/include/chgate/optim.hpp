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

#include <span>
#include <string>
#include <vector>

#include "chgate/tensor.hpp"

namespace chgate {

// A trainable tensor plus its optimizer state.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<float> momentum_buffer;
  float weight_decay = 0.0f;
  // Multiplies the loss gradient (not the decay term) before it enters the
  // momentum buffer. Gate parameters use it to compensate for the small
  // number of steps of desk-scale runs.
  float grad_scale = 1.0f;
  bool is_gate = false;

  Parameter() = default;
  Parameter(std::string name, Tensor tensor, float weight_decay = 0.0f);
};

// v <- momentum * v + grad_scale * grad + weight_decay * w;  w <- w - lr * v.
// A parameter without a gradient buffer is treated as having zero
// gradient. Throws DivergenceError naming the first parameter whose update
// is non-finite.
void sgd_step(std::span<Parameter* const> params, float lr, float momentum);

void zero_grads(std::span<Parameter* const> params);

}  // namespace chgate
