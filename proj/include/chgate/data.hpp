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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chgate/tensor.hpp"

namespace chgate {

struct Dataset {
  Tensor images;            // [N,C,S,S], values in [0,1] plus noise
  std::vector<int> labels;  // length N
  std::int64_t num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t channels() const { return images.dim(1); }
  std::int64_t image_size() const { return images.dim(2); }

  Dataset subset(std::span<const std::int64_t> indices) const;
  // Images of the given samples stacked into one batch.
  Tensor batch(std::span<const std::int64_t> indices) const;
};

// Sample i belongs to the evaluation split iff i % 5 == 4.
struct Split {
  Dataset train;
  Dataset eval;
};
Split split_train_eval(const Dataset& d);

struct SyntheticSpec {
  std::int64_t num_classes = 4;
  std::int64_t samples_per_class = 250;
  std::int64_t image_size = 16;
  std::int64_t channels = 3;
  double noise_sigma = 0.1;
  double amplitude = 0.2;
  std::uint64_t seed = 0;
  // Paint the square of class k only in channel k % channels, so classes
  // also differ in globally pooled statistics.
  bool color_coded = false;
};

// Class k paints a square of side image_size/4 with the given amplitude in
// cell k of a ceil(sqrt(K)) x ceil(sqrt(K)) grid, then every pixel gets
// N(0, noise_sigma^2) noise. Sample i has label i % K. Throws ValueError
// when K < 2 or the pattern does not fit its cell.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// IDX images (magic 0x00000803, dims N,H,W, unsigned bytes) and labels
// (magic 0x00000801, dim N). Pixels are scaled to [0,1]. Throws
// FormatError on bad magic, truncation, or mismatched N.
Dataset load_idx_dataset(const std::filesystem::path& images,
                         const std::filesystem::path& labels);

// Dataset descriptor used by configs and the CLI:
//   {"kind": "synthetic", <SyntheticSpec fields>}
//   {"kind": "idx", "images": path, "labels": path}
struct DatasetDescriptor {
  std::string kind = "synthetic";
  SyntheticSpec synthetic;
  std::filesystem::path images;
  std::filesystem::path labels;

  nlohmann::json to_json() const;
  // Unknown keys are ConfigErrors; IDX paths must exist.
  static DatasetDescriptor from_json(const nlohmann::json& j);
  // "synthetic", a JSON document, or a path to a JSON file.
  static DatasetDescriptor parse(const std::string& text);
  Dataset load() const;
};

}  // namespace chgate
