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

#include "chgate/optim.hpp"

#include <cmath>

#include "chgate/error.hpp"

namespace chgate {

Parameter::Parameter(std::string n, Tensor t, float wd)
    : name(std::move(n)), tensor(std::move(t)), weight_decay(wd) {
  if (wd < 0.0f) throw ValueError("weight decay of " + name + " is negative");
  tensor.set_requires_grad(true);
  momentum_buffer.assign(static_cast<std::size_t>(tensor.numel()), 0.0f);
}

void sgd_step(std::span<Parameter* const> params, float lr, float momentum) {
  for (Parameter* p : params) {
    auto w = p->tensor.data();
    if (p->momentum_buffer.size() != w.size()) {
      p->momentum_buffer.assign(w.size(), 0.0f);
    }
    const bool has_grad = p->tensor.has_grad();
    auto g = p->tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = has_grad ? g[i] : 0.0f;
      float& v = p->momentum_buffer[i];
      v = momentum * v + p->grad_scale * gi + p->weight_decay * w[i];
      const float next = w[i] - lr * v;
      if (!std::isfinite(next)) {
        throw DivergenceError("non-finite update for parameter " + p->name +
                              " at element " + std::to_string(i));
      }
      w[i] = next;
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

}  // namespace chgate
