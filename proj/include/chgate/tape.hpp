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

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "chgate/tensor.hpp"

namespace chgate {

// Receives the gradient flowing into a node's output and accumulates the
// corresponding input gradients.
using BackwardFn = std::function<void(std::span<const float> grad_out)>;

// Append-only record of differentiable operations. Nodes are stored in
// creation order, so walking them backwards is a valid topological order.
// The tape is emptied by every backward() call.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  // Tape installed on this thread by TapeScope, or nullptr.
  static Tape* current();

  // True when an op on these inputs should be recorded on the current tape.
  static bool tracking(std::initializer_list<const Tensor*> inputs);
  static bool tracking(std::span<const Tensor> inputs);

  // Appends a node producing `out`. The caller has already checked
  // tracking().
  void record(Tensor& out, std::initializer_list<const Tensor*> inputs,
              BackwardFn fn);
  void record(Tensor& out, std::span<const Tensor> inputs, BackwardFn fn);

  // Populates .grad of every tracked tensor reachable from `loss`, then
  // clears the tape. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

// Installs a tape as the current one for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

// Gradient buffer of `t`, allocated on first use.
std::span<float> grad_buffer(const Tensor& t);

}  // namespace chgate
