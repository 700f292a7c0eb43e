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

#include "chgate/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "chgate/error.hpp"
#include "chgate/kernels.hpp"
#include "chgate/tape.hpp"

namespace chgate::ops {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
  }
}

void add_into(std::span<float> dst, std::span<const float> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

BatchNormState::BatchNormState(std::int64_t channels)
    : running_mean(Shape{channels}, 0.0f), running_var(Shape{channels}, 1.0f) {}

BnAffine bn_eval_affine(float gamma, float beta, float mean, float var,
                        float epsilon) {
  const float inv = 1.0f / std::sqrt(var + epsilon);
  const float scale = gamma * inv;
  return {scale, beta - mean * scale};
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::int64_t stride,
              std::int64_t padding) {
  const auto g = kernels::conv_geometry(input.shape(), kernel.shape(), stride,
                                        padding);
  Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  kernels::conv2d_forward(g, input.ptr(), kernel.ptr(), out.ptr());
  if (Tape::tracking({&input, &kernel})) {
    Tape::current()->record(
        out, {&input, &kernel}, [input, kernel, g](std::span<const float> gy) {
          std::vector<float> gx, gw;
          if (input.requires_grad()) gx.resize(input.data().size());
          if (kernel.requires_grad()) gw.resize(kernel.data().size());
          kernels::conv2d_backward(g, input.ptr(), kernel.ptr(), gy.data(),
                                   gx.empty() ? nullptr : gx.data(),
                                   gw.empty() ? nullptr : gw.data());
          if (!gx.empty()) add_into(grad_buffer(input), gx);
          if (!gw.empty()) add_into(grad_buffer(kernel), gw);
        });
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, BnMode mode) {
  const auto rank = input.rank();
  if (rank != 4 && rank != 2) {
    throw ShapeError("batch_norm input must be [N,C,H,W] or [N,C], got " +
                     shape_str(input.shape()));
  }
  const auto n = input.dim(0);
  const auto c = input.dim(1);
  const auto plane = rank == 4 ? input.dim(2) * input.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || state.channels() != c) {
    throw ShapeError("batch_norm channel count (dim 1) is " +
                     std::to_string(c) + " but gamma/beta/stats have " +
                     std::to_string(gamma.numel()) + "/" +
                     std::to_string(beta.numel()) + "/" +
                     std::to_string(state.channels()));
  }
  if (!(state.epsilon > 0.0f)) throw ValueError("batch_norm epsilon must be > 0");
  const auto count = n * plane;
  Tensor out(input.shape());
  const float* x = input.ptr();
  float* y = out.ptr();

  if (mode == BnMode::kEval) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto aff = bn_eval_affine(gamma[ch], beta[ch], state.running_mean[ch],
                                      state.running_var[ch], state.epsilon);
      for (std::int64_t i = 0; i < n; ++i) {
        const auto base = (i * c + ch) * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
          y[base + p] = x[base + p] * aff.scale + aff.shift;
        }
      }
    }
    if (Tape::tracking({&input, &gamma, &beta})) {
      Tensor rm = state.running_mean.clone();
      Tensor rv = state.running_var.clone();
      const float eps = state.epsilon;
      Tape::current()->record(
          out, {&input, &gamma, &beta},
          [input, gamma, beta, rm, rv, eps, n, c, plane](std::span<const float> gy) {
            const bool want_x = input.requires_grad();
            const bool want_g = gamma.requires_grad();
            const bool want_b = beta.requires_grad();
            auto gx = want_x ? grad_buffer(input) : std::span<float>{};
            auto gg = want_g ? grad_buffer(gamma) : std::span<float>{};
            auto gb = want_b ? grad_buffer(beta) : std::span<float>{};
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const float inv = 1.0f / std::sqrt(rv[ch] + eps);
              double sg = 0.0, sb = 0.0;
              for (std::int64_t i = 0; i < n; ++i) {
                const auto base = (i * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                  const float d = gy[base + p];
                  if (want_x) gx[base + p] += d * gamma[ch] * inv;
                  sg += static_cast<double>(d) * (input[base + p] - rm[ch]) * inv;
                  sb += d;
                }
              }
              if (want_g) gg[ch] += static_cast<float>(sg);
              if (want_b) gb[ch] += static_cast<float>(sb);
            }
          });
    }
    return out;
  }

  if (count < 2) {
    throw ValueError("batch_norm train mode needs N*H*W >= 2, got " +
                     std::to_string(count));
  }
  std::vector<float> mean(c), inv_std(c);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = (i * c + ch) * plane;
      for (std::int64_t p = 0; p < plane; ++p) s += x[base + p];
    }
    const double mu = s / static_cast<double>(count);
    double ss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = (i * c + ch) * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const double d = x[base + p] - mu;
        ss += d * d;
      }
    }
    const double var = ss / static_cast<double>(count);
    if (!std::isfinite(mu) || !std::isfinite(var)) {
      throw ValueError("batch_norm: non-finite statistics in channel " +
                       std::to_string(ch));
    }
    mean[ch] = static_cast<float>(mu);
    inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + state.epsilon));
    const float m = state.momentum;
    const double unbiased = ss / static_cast<double>(count - 1);
    state.running_mean[ch] = (1.0f - m) * state.running_mean[ch] + m * mean[ch];
    state.running_var[ch] =
        (1.0f - m) * state.running_var[ch] + m * static_cast<float>(unbiased);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = (i * c + ch) * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        y[base + p] = (x[base + p] - mean[ch]) * inv_std[ch] * gamma[ch] + beta[ch];
      }
    }
  }
  if (Tape::tracking({&input, &gamma, &beta})) {
    Tape::current()->record(
        out, {&input, &gamma, &beta},
        [input, gamma, beta, mean, inv_std, n, c, plane,
         count](std::span<const float> gy) {
          const bool want_x = input.requires_grad();
          const bool want_g = gamma.requires_grad();
          const bool want_b = beta.requires_grad();
          auto gx = want_x ? grad_buffer(input) : std::span<float>{};
          auto gg = want_g ? grad_buffer(gamma) : std::span<float>{};
          auto gb = want_b ? grad_buffer(beta) : std::span<float>{};
          for (std::int64_t ch = 0; ch < c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
              const auto base = (i * c + ch) * plane;
              for (std::int64_t p = 0; p < plane; ++p) {
                const double xhat = (input[base + p] - mean[ch]) * inv_std[ch];
                sum_dy += gy[base + p];
                sum_dy_xhat += gy[base + p] * xhat;
              }
            }
            if (want_g) gg[ch] += static_cast<float>(sum_dy_xhat);
            if (want_b) gb[ch] += static_cast<float>(sum_dy);
            if (!want_x) continue;
            const double k = gamma[ch] * inv_std[ch] / static_cast<double>(count);
            for (std::int64_t i = 0; i < n; ++i) {
              const auto base = (i * c + ch) * plane;
              for (std::int64_t p = 0; p < plane; ++p) {
                const double xhat = (input[base + p] - mean[ch]) * inv_std[ch];
                gx[base + p] += static_cast<float>(
                    k * (count * static_cast<double>(gy[base + p]) - sum_dy -
                         xhat * sum_dy_xhat));
              }
            }
          }
        });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = relu_value(x[i]);
  if (Tape::tracking({&x})) {
    Tape::current()->record(out, {&x}, [x](std::span<const float> gy) {
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[static_cast<std::int64_t>(i)] > 0.0f) gx[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor channel_mask(const Tensor& features, const Tensor& z) {
  if (features.rank() != 4) {
    throw ShapeError("channel_mask features must be [N,C,H,W], got " +
                     shape_str(features.shape()));
  }
  const auto n = features.dim(0);
  const auto c = features.dim(1);
  const auto plane = features.dim(2) * features.dim(3);
  // z index for (sample, channel): shared, per-sample or per-layer.
  std::int64_t z_sample_stride = 0, z_channel_stride = 0;
  if (z.rank() == 1 && z.dim(0) == c) {
    z_channel_stride = 1;
  } else if (z.rank() == 2 && z.dim(0) == n && z.dim(1) == c) {
    z_sample_stride = c;
    z_channel_stride = 1;
  } else if (z.rank() == 2 && z.dim(0) == n && z.dim(1) == 1) {
    z_sample_stride = 1;
  } else {
    throw ShapeError("channel_mask: z shape " + shape_str(z.shape()) +
                     " does not match channels (dim 1) of features " +
                     shape_str(features.shape()));
  }
  Tensor out(features.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float zv = z[i * z_sample_stride + ch * z_channel_stride];
      const auto base = (i * c + ch) * plane;
      for (std::int64_t p = 0; p < plane; ++p) out[base + p] = features[base + p] * zv;
    }
  }
  if (Tape::tracking({&features, &z})) {
    Tape::current()->record(
        out, {&features, &z},
        [features, z, n, c, plane, z_sample_stride,
         z_channel_stride](std::span<const float> gy) {
          if (features.requires_grad()) {
            auto gx = grad_buffer(features);
            for (std::int64_t i = 0; i < n; ++i) {
              for (std::int64_t ch = 0; ch < c; ++ch) {
                const float zv = z[i * z_sample_stride + ch * z_channel_stride];
                const auto base = (i * c + ch) * plane;
                for (std::int64_t p = 0; p < plane; ++p) gx[base + p] += gy[base + p] * zv;
              }
            }
          }
          if (z.requires_grad()) {
            auto gz = grad_buffer(z);
            for (std::int64_t i = 0; i < n; ++i) {
              for (std::int64_t ch = 0; ch < c; ++ch) {
                const auto base = (i * c + ch) * plane;
                double acc = 0.0;
                for (std::int64_t p = 0; p < plane; ++p) {
                  acc += static_cast<double>(gy[base + p]) * features[base + p];
                }
                gz[i * z_sample_stride + ch * z_channel_stride] += static_cast<float>(acc);
              }
            }
          }
        });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (Tape::tracking({&a, &b})) {
    Tape::current()->record(out, {&a, &b}, [a, b](std::span<const float> gy) {
      if (a.requires_grad()) add_into(grad_buffer(a), gy);
      if (b.requires_grad()) add_into(grad_buffer(b), gy);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (Tape::tracking({&a, &b})) {
    Tape::current()->record(out, {&a, &b}, [a, b](std::span<const float> gy) {
      if (a.requires_grad()) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[static_cast<std::int64_t>(i)];
      }
      if (b.requires_grad()) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[static_cast<std::int64_t>(i)];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  if (Tape::tracking({&a})) {
    Tape::current()->record(out, {&a}, [a, s](std::span<const float> gy) {
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, float c) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + c;
  if (Tape::tracking({&a})) {
    Tape::current()->record(out, {&a}, [a](std::span<const float> gy) {
      add_into(grad_buffer(a), gy);
    });
  }
  return out;
}

Tensor square(const Tensor& a) {
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * a[i];
  if (Tape::tracking({&a})) {
    Tape::current()->record(out, {&a}, [a](std::span<const float> gy) {
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += 2.0f * a[static_cast<std::int64_t>(i)] * gy[i];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (const float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (Tape::tracking({&a})) {
    Tape::current()->record(out, {&a}, [a](std::span<const float> gy) {
      auto ga = grad_buffer(a);
      for (auto& g : ga) g += gy[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (const float v : a.data()) acc += v;
  const auto n = static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (Tape::tracking({&a})) {
    Tape::current()->record(out, {&a}, [a, n](std::span<const float> gy) {
      auto ga = grad_buffer(a);
      const auto g = static_cast<float>(gy[0] / n);
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("global_avg_pool needs [N,C,H,W], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::int64_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    out[i] = static_cast<float>(acc / static_cast<double>(plane));
  }
  if (Tape::tracking({&x})) {
    Tape::current()->record(out, {&x}, [x, n, c, plane](std::span<const float> gy) {
      auto gx = grad_buffer(x);
      const float inv = 1.0f / static_cast<float>(plane);
      for (std::int64_t i = 0; i < n * c; ++i) {
        const float g = gy[i] * inv;
        for (std::int64_t p = 0; p < plane; ++p) gx[i * plane + p] += g;
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2) {
    throw ShapeError("linear expects x [N,In] and weight [Out,In], got " +
                     shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  const auto n = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: In (dim 1) of weight is " + std::to_string(weight.dim(1)) +
                     ", input has " + std::to_string(in));
  }
  if (bias.numel() != outf) {
    throw ShapeError("linear: bias has " + std::to_string(bias.numel()) +
                     " entries, expected Out=" + std::to_string(outf));
  }
  Tensor out(Shape{n, outf});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t o = 0; o < outf; ++o) {
      float acc = 0.0f;
      for (std::int64_t k = 0; k < in; ++k) acc += weight[o * in + k] * x[i * in + k];
      out[i * outf + o] = acc + bias[o];
    }
  }
  if (Tape::tracking({&x, &weight, &bias})) {
    Tape::current()->record(
        out, {&x, &weight, &bias},
        [x, weight, bias, n, in, outf](std::span<const float> gy) {
          if (x.requires_grad()) {
            auto gx = grad_buffer(x);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t o = 0; o < outf; ++o)
                for (std::int64_t k = 0; k < in; ++k)
                  gx[i * in + k] += gy[i * outf + o] * weight[o * in + k];
          }
          if (weight.requires_grad()) {
            auto gw = grad_buffer(weight);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t o = 0; o < outf; ++o)
                for (std::int64_t k = 0; k < in; ++k)
                  gw[o * in + k] += gy[i * outf + o] * x[i * in + k];
          }
          if (bias.requires_grad()) {
            auto gb = grad_buffer(bias);
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t o = 0; o < outf; ++o) gb[o] += gy[i * outf + o];
          }
        });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy logits must be [N,K], got " + shape_str(logits.shape()));
  }
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch (dim 0) of " + std::to_string(n));
  }
  std::vector<float> probs(static_cast<std::size_t>(n * k));
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      throw ValueError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                       std::to_string(k) + ")");
    }
    const float* row = logits.ptr() + i * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (std::int64_t j = 0; j < k; ++j) {
      probs[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
    total += std::log(z) + mx - row[y];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));
  if (Tape::tracking({&logits})) {
    std::vector<int> ys(labels.begin(), labels.end());
    Tape::current()->record(out, {&logits},
                            [logits, probs, ys, n, k](std::span<const float> gy) {
                              auto gl = grad_buffer(logits);
                              const float s = gy[0] / static_cast<float>(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                for (std::int64_t j = 0; j < k; ++j) {
                                  const float target = (j == ys[i]) ? 1.0f : 0.0f;
                                  gl[i * k + j] += s * (probs[i * k + j] - target);
                                }
                              }
                            });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes the element count");
  }
  Tensor out(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  if (Tape::tracking({&x})) {
    Tape::current()->record(out, {&x}, [x](std::span<const float> gy) {
      add_into(grad_buffer(x), gy);
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end) {
  if (x.rank() != 2 || begin < 0 || end > x.dim(1) || begin >= end) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), m = x.dim(1), w = end - begin;
  Tensor out(Shape{n, w});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < w; ++j) out[i * w + j] = x[i * m + begin + j];
  if (Tape::tracking({&x})) {
    Tape::current()->record(out, {&x}, [x, n, m, w, begin](std::span<const float> gy) {
      auto gx = grad_buffer(x);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < w; ++j) gx[i * m + begin + j] += gy[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const auto n = parts[0].dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) {
      throw ShapeError("concat_cols: part " + shape_str(p.shape()) +
                       " does not have " + std::to_string(n) + " rows (dim 0)");
    }
    total += p.dim(1);
  }
  Tensor out(Shape{n, total});
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const auto w = p.dim(1);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < w; ++j) out[i * total + offset + j] = p[i * w + j];
    offset += w;
  }
  if (Tape::tracking(parts)) {
    std::vector<Tensor> kept(parts.begin(), parts.end());
    Tape::current()->record(out, parts, [kept, n, total](std::span<const float> gy) {
      std::int64_t off = 0;
      for (const auto& p : kept) {
        const auto w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = grad_buffer(p);
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < w; ++j) gp[i * w + j] += gy[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

}  // namespace chgate::ops
