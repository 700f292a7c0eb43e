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

#include "chgate/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "chgate/error.hpp"

namespace chgate::kernels {
namespace {

// col[r][p] for r over (listed channel, kh, kw), p over output pixels.
void im2col(const ConvGeometry& g, const float* x,
            std::span<const std::int64_t> channels, float* col) {
  const auto plane = g.out_plane();
  std::int64_t r = 0;
  for (const auto ci : channels) {
    const float* xc = x + ci * g.height * g.width;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw, ++r) {
        float* dst = col + r * plane;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = oh * g.stride - g.padding + kh;
          float* row = dst + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(row, row + g.out_w, 0.0f);
            continue;
          }
          const float* src = xc + ih * g.width;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = ow * g.stride - g.padding + kw;
            row[ow] = (iw >= 0 && iw < g.width) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* col, float* x) {
  const auto plane = g.out_plane();
  std::int64_t r = 0;
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
    float* xc = x + ci * g.height * g.width;
    for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (std::int64_t kw = 0; kw < g.kernel_w; ++kw, ++r) {
        const float* src = col + r * plane;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = oh * g.stride - g.padding + kh;
          if (ih < 0 || ih >= g.height) continue;
          float* dst = xc + ih * g.width;
          for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = ow * g.stride - g.padding + kw;
            if (iw >= 0 && iw < g.width) dst[iw] += src[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

std::string dim_msg(const char* what, std::int64_t got, std::int64_t want) {
  return std::string(what) + ": got " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

}  // namespace

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel,
                           std::int64_t stride, std::int64_t padding) {
  if (input.size() != 4) {
    throw ShapeError("conv2d input must be [N,Cin,H,W], got " +
                     shape_str(input));
  }
  if (kernel.size() != 4) {
    throw ShapeError("conv2d kernel must be [Cout,Cin,Kh,Kw], got " +
                     shape_str(kernel));
  }
  if (stride < 1) throw ValueError("conv2d stride must be positive");
  if (padding < 0) throw ValueError("conv2d padding must be nonnegative");
  if (input[1] != kernel[1]) {
    throw ShapeError(dim_msg("conv2d Cin (dim 1) of kernel vs input",
                             kernel[1], input[1]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.padding = padding;
  const auto span_h = g.height + 2 * padding - g.kernel_h;
  const auto span_w = g.width + 2 * padding - g.kernel_w;
  if (span_h < 0) {
    throw ShapeError("conv2d output height (dim 2) would be < 1: H=" +
                     std::to_string(g.height) + " Kh=" +
                     std::to_string(g.kernel_h));
  }
  if (span_w < 0) {
    throw ShapeError("conv2d output width (dim 3) would be < 1: W=" +
                     std::to_string(g.width) + " Kw=" +
                     std::to_string(g.kernel_w));
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

void conv2d_forward_reference(const ConvGeometry& g, const float* x,
                              const float* w, float* y) {
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          float acc = 0.0f;
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = oh * g.stride - g.padding + kh;
              if (ih < 0 || ih >= g.height) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = ow * g.stride - g.padding + kw;
                if (iw < 0 || iw >= g.width) continue;
                acc += x[((n * g.in_channels + ci) * g.height + ih) * g.width +
                         iw] *
                       w[((co * g.in_channels + ci) * g.kernel_h + kh) *
                             g.kernel_w +
                         kw];
              }
            }
          }
          y[((n * g.out_channels + co) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

void conv2d_backward_reference(const ConvGeometry& g, const float* x,
                               const float* w, const float* gy, float* gx,
                               float* gw) {
  if (gx) std::fill(gx, gx + g.batch * g.in_image(), 0.0f);
  if (gw) std::fill(gw, gw + g.out_channels * g.kernel_row(), 0.0f);
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
        for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
          const float go =
              gy[((n * g.out_channels + co) * g.out_h + oh) * g.out_w + ow];
          for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::int64_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = oh * g.stride - g.padding + kh;
              if (ih < 0 || ih >= g.height) continue;
              for (std::int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = ow * g.stride - g.padding + kw;
                if (iw < 0 || iw >= g.width) continue;
                const auto xi =
                    ((n * g.in_channels + ci) * g.height + ih) * g.width + iw;
                const auto wi =
                    ((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w +
                    kw;
                if (gx) gx[xi] += go * w[wi];
                if (gw) gw[wi] += go * x[xi];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_forward_image(const ConvGeometry& g, const float* x_image,
                          const float* w, float* y_image,
                          std::span<const std::int64_t> in_channels,
                          std::span<const std::int64_t> out_channels,
                          std::vector<float>& col) {
  const auto plane = g.out_plane();
  const auto area = g.kernel_area();
  const auto rows = static_cast<std::int64_t>(in_channels.size()) * area;
  col.resize(static_cast<std::size_t>(rows * plane));
  im2col(g, x_image, in_channels, col.data());
  std::fill(y_image, y_image + g.out_image(), 0.0f);
  for (const auto co : out_channels) {
    float* yc = y_image + co * plane;
    const float* wc = w + co * g.kernel_row();
    std::int64_t r = 0;
    for (const auto ci : in_channels) {
      for (std::int64_t k = 0; k < area; ++k, ++r) {
        const float a = wc[ci * area + k];
        const float* src = col.data() + r * plane;
        for (std::int64_t p = 0; p < plane; ++p) yc[p] += a * src[p];
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w,
                    float* y) {
  const auto in_all = iota_channels(g.in_channels);
  const auto out_all = iota_channels(g.out_channels);
#pragma omp parallel
  {
    std::vector<float> col;
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      conv2d_forward_image(g, x + n * g.in_image(), w, y + n * g.out_image(),
                           in_all, out_all, col);
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const float* x, const float* w,
                     const float* gy, float* gx, float* gw) {
  const auto plane = g.out_plane();
  const auto rows = g.kernel_row();
  const auto in_all = iota_channels(g.in_channels);
  std::vector<float> gw_parts;
  if (gw) gw_parts.assign(static_cast<std::size_t>(g.batch * g.out_channels * rows), 0.0f);
#pragma omp parallel
  {
    std::vector<float> col(static_cast<std::size_t>(rows * plane));
    std::vector<float> gcol;
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* gyn = gy + n * g.out_image();
      if (gw) {
        im2col(g, x + n * g.in_image(), in_all, col.data());
        float* part = gw_parts.data() + n * g.out_channels * rows;
        for (std::int64_t co = 0; co < g.out_channels; ++co) {
          const float* gyc = gyn + co * plane;
          float* dst = part + co * rows;
          for (std::int64_t r = 0; r < rows; ++r) {
            const float* src = col.data() + r * plane;
            float acc = 0.0f;
            for (std::int64_t p = 0; p < plane; ++p) acc += gyc[p] * src[p];
            dst[r] = acc;
          }
        }
      }
      if (gx) {
        gcol.assign(static_cast<std::size_t>(rows * plane), 0.0f);
        for (std::int64_t co = 0; co < g.out_channels; ++co) {
          const float* gyc = gyn + co * plane;
          const float* wc = w + co * rows;
          for (std::int64_t r = 0; r < rows; ++r) {
            const float a = wc[r];
            float* dst = gcol.data() + r * plane;
            for (std::int64_t p = 0; p < plane; ++p) dst[p] += a * gyc[p];
          }
        }
        float* gxn = gx + n * g.in_image();
        std::fill(gxn, gxn + g.in_image(), 0.0f);
        col2im_add(g, gcol.data(), gxn);
      }
    }
  }
  if (gw) {
    const auto total = g.out_channels * rows;
    std::fill(gw, gw + total, 0.0f);
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const float* part = gw_parts.data() + n * total;
      for (std::int64_t i = 0; i < total; ++i) gw[i] += part[i];
    }
  }
}

std::vector<std::int64_t> iota_channels(std::int64_t n) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), std::int64_t{0});
  return v;
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
  if (const char* env = std::getenv("GATES_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) set_num_threads(n);
  }
}

}  // namespace chgate::kernels
