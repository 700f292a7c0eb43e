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

// Raw convolution kernels. Two implementations are kept side by side:
//
//   *_reference  direct nested loops, serial; the numerical baseline used
//                by tests and the benchmark.
//   (unsuffixed) im2col followed by a row-update GEMM, parallel over the
//                batch with OpenMP.
//
// The parallel kernels never split a reduction across threads in a
// thread-count dependent way, so their results are bitwise identical for
// any GATES_THREADS setting.
namespace chgate::kernels {

struct ConvGeometry {
  std::int64_t batch = 0;
  std::int64_t in_channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel_h = 0;
  std::int64_t kernel_w = 0;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;

  std::int64_t in_image() const { return in_channels * height * width; }
  std::int64_t out_image() const { return out_channels * out_h * out_w; }
  std::int64_t out_plane() const { return out_h * out_w; }
  std::int64_t kernel_area() const { return kernel_h * kernel_w; }
  std::int64_t kernel_row() const { return in_channels * kernel_area(); }
};

// Validates an input [N,Cin,H,W] / kernel [Cout,Cin,Kh,Kw] pair. Throws
// ShapeError naming the offending dimension.
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel,
                           std::int64_t stride, std::int64_t padding);

void conv2d_forward_reference(const ConvGeometry& g, const float* x,
                              const float* w, float* y);
// gx and gw may be null; both are overwritten, not accumulated.
void conv2d_backward_reference(const ConvGeometry& g, const float* x,
                               const float* w, const float* gy, float* gx,
                               float* gw);

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w,
                    float* y);
// gx and gw may be null; both are overwritten, not accumulated.
void conv2d_backward(const ConvGeometry& g, const float* x, const float* w,
                     const float* gy, float* gx, float* gw);

// One image with a subset of input and output channels. Input channels not
// listed are treated as zero and skipped; output channels not listed are
// written as +0. With the full channel lists this is exactly the per-image
// body of conv2d_forward, so the two paths agree bitwise whenever the
// skipped inputs are zero.
void conv2d_forward_image(const ConvGeometry& g, const float* x_image,
                          const float* w, float* y_image,
                          std::span<const std::int64_t> in_channels,
                          std::span<const std::int64_t> out_channels,
                          std::vector<float>& col);

std::vector<std::int64_t> iota_channels(std::int64_t n);

// Thread cap for the OpenMP kernels. Reads GATES_THREADS when set.
void configure_threads_from_env();
void set_num_threads(int n);
int num_threads();

}  // namespace chgate::kernels
