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

namespace chgate {

// Named stream families. Every random draw in the library comes from a
// stream derived from (global seed, family, ...), so that adding a draw in
// one place never shifts the numbers seen elsewhere.
enum class StreamFamily : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kGateNoise = 3,
  kDataset = 4,
  kInference = 5,
  kVerify = 6,
  kTest = 7,
};

// SplitMix64 generator. The standard <random> distributions are
// implementation-defined, so the float conversions here are written out to
// keep seeded runs bitwise reproducible across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  // Stream keyed by a seed and any number of integer coordinates.
  static RngStream derive(std::uint64_t seed,
                          std::initializer_list<std::uint64_t> keys);
  static RngStream derive(std::uint64_t seed, StreamFamily family,
                          std::initializer_list<std::uint64_t> keys = {});

  std::uint64_t next_u64();
  // Uniform on [0,1) with 53 random bits.
  double uniform();
  // Standard normal (Box-Muller, both outputs used).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace chgate
