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

#include <stdexcept>
#include <string>

namespace chgate {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation. The message names the
// offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside the domain of an operation (non-finite logits, tau
// outside [0,1], empty records, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: checkpoints, IDX files, JSON documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration. The CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or parameter update.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace chgate
