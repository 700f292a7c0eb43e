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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chgate/tensor.hpp"

namespace chgate {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// On-disk layout: one line of compact JSON
//   {"meta": {...}, "tensors": [{"name","shape","offset","len"}, ...]}
// followed by '\n' and the concatenated little-endian float32 payload.
// Offsets and lengths count elements, not bytes.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  // Throws FormatError when the name is absent.
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path,
                      std::span<const NamedTensor> tensors,
                      const nlohmann::json& meta);

// Throws FormatError on a malformed header, overlapping or out-of-range
// offsets, or a truncated payload.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace chgate
