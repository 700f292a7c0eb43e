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

#include "chgate/tape.hpp"

#include <string>

#include "chgate/error.hpp"

namespace chgate {
namespace {
thread_local Tape* g_current_tape = nullptr;
}  // namespace

Tape::~Tape() { clear(); }

Tape* Tape::current() { return g_current_tape; }

bool Tape::tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_current_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool Tape::tracking(std::span<const Tensor> inputs) {
  if (g_current_tape == nullptr) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void Tape::record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                  BackwardFn fn) {
  std::vector<Tensor> kept;
  for (const Tensor* t : inputs) {
    if (t != nullptr) kept.push_back(*t);
  }
  record(out, std::span<const Tensor>(kept), std::move(fn));
}

void Tape::record(Tensor& out, std::span<const Tensor> inputs, BackwardFn fn) {
  Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) node.inputs.push_back(t.impl());
  }
  out.set_requires_grad(true);
  out.impl()->node = static_cast<std::int64_t>(nodes_.size());
  node.output = out.impl();
  node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  const auto root = loss.node();
  if (root < 0) {
    if (!loss.requires_grad()) {
      throw ValueError("loss is not connected to any parameter");
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0f;
    return;
  }
  if (root >= static_cast<std::int64_t>(nodes_.size()) ||
      nodes_[root].output != loss.impl()) {
    throw ValueError("loss was not recorded on this tape");
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0f;

  for (std::int64_t i = root; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    for (const auto& in : node.inputs) {
      if (in->node >= i) {
        throw Error("graph corruption: node " + std::to_string(i) +
                    " consumes node " + std::to_string(in->node));
      }
    }
    node.fn(node.output->grad);
  }
  clear();
}

void Tape::clear() {
  for (auto& node : nodes_) {
    node.output->node = -1;
    node.output->grad.clear();
    node.output->grad.shrink_to_fit();
  }
  nodes_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

std::span<float> grad_buffer(const Tensor& t) {
  t.impl()->ensure_grad();
  return t.impl()->grad;
}

}  // namespace chgate
