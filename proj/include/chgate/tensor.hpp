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
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace chgate {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage shared by Tensor handles. `node` is the index of the tape entry
// that produced this value, or -1 for leaves and untracked values.
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::int64_t node = -1;

  void ensure_grad();
};

// Dense row-major float32 array. Copies are shallow: two Tensor handles
// may refer to the same storage, which is how graph nodes keep their
// inputs alive until backward.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(impl_->data.size());
  }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float* ptr() { return impl_->data.data(); }
  const float* ptr() const { return impl_->data.data(); }
  float& operator[](std::int64_t i) { return impl_->data[i]; }
  float operator[](std::int64_t i) const { return impl_->data[i]; }

  // Value of a single-element tensor.
  float item() const;

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<float> grad() { return impl_->grad; }
  std::span<const float> grad() const { return impl_->grad; }
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  std::int64_t node() const { return impl_->node; }

  // Deep copy of the values only; the copy is a fresh leaf.
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace chgate
