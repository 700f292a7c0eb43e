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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "chgate/error.hpp"
#include "chgate/rng.hpp"
#include "chgate/tape.hpp"
#include "chgate/tensor.hpp"

// Gradient oracle. Analytic gradients come from the library's float32 tape;
// numeric gradients are central differences of an independent
// double-precision re-implementation of the same function (the "shadow"),
// so float rounding in the forward pass does not pollute the comparison.
namespace chgate::testing {

// Double-precision dense array used by shadow implementations.
struct D {
  Shape shape;
  std::vector<double> v;

  D() = default;
  explicit D(Shape s, double fill = 0.0)
      : shape(std::move(s)), v(static_cast<std::size_t>(shape_numel(shape)), fill) {}
  explicit D(const Tensor& t)
      : shape(t.shape()), v(t.data().begin(), t.data().end()) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  double& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const {
    return v[static_cast<std::size_t>(i)];
  }
};

struct GradCheckResult {
  // Largest over input tensors of max_i |a_i - n_i| / max_i |n_i|.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

using ShadowFn = std::function<double(const std::vector<D>&)>;

inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       const ShadowFn& shadow,
                                       std::vector<Tensor> inputs,
                                       double eps = 1e-3) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<D> point;
  for (const auto& t : inputs) point.emplace_back(t);
  GradCheckResult r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double worst = 0.0;
    double scale = 0.0;
    for (std::int64_t i = 0; i < point[k].numel(); ++i) {
      const double orig = point[k][i];
      point[k][i] = orig + eps;
      const double up = shadow(point);
      point[k][i] = orig - eps;
      const double down = shadow(point);
      point[k][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = inputs[k].has_grad() ? inputs[k].grad()[i] : 0.0;
      worst = std::max(worst, std::abs(analytic - numeric));
      scale = std::max(scale, std::abs(numeric));
    }
    r.max_abs_error = std::max(r.max_abs_error, worst);
    if (scale > 0.0) r.max_rel_error = std::max(r.max_rel_error, worst / scale);
  }
  return r;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed,
                            double scale = 1.0) {
  Tensor t(std::move(shape));
  RngStream rng = RngStream::derive(seed, StreamFamily::kTest);
  for (float& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

namespace shadow {

inline D conv2d(const D& x, const D& w, std::int64_t stride,
                std::int64_t pad) {
  const std::int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  D y({n, cout, oh, ow});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t p = 0; p < kh; ++p)
              for (std::int64_t q = 0; q < kw; ++q) {
                const std::int64_t yy = i * stride - pad + p;
                const std::int64_t xx = j * stride - pad + q;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += x[((b * cin + c) * h + yy) * wd + xx] *
                       w[((o * cin + c) * kh + p) * kw + q];
              }
          y[((b * cout + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

// Per-channel batch norm over [N,C] or [N,C,H,W]. With mean/var given the
// running statistics are used (eval); otherwise batch statistics with the
// biased variance (train).
inline D batch_norm(const D& x, const D& gamma, const D& beta, double eps,
                    const D* mean = nullptr, const D* var = nullptr) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t inner = x.numel() / (n * c);
  D y(x.shape);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double m = 0.0, v = 0.0;
    if (mean) {
      m = (*mean)[ch];
      v = (*var)[ch];
    } else {
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < inner; ++i) m += x[(b * c + ch) * inner + i];
      m /= static_cast<double>(n * inner);
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < inner; ++i) {
          const double d = x[(b * c + ch) * inner + i] - m;
          v += d * d;
        }
      v /= static_cast<double>(n * inner);
    }
    const double inv = 1.0 / std::sqrt(v + eps);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t k = (b * c + ch) * inner + i;
        y[k] = gamma[ch] * (x[k] - m) * inv + beta[ch];
      }
  }
  return y;
}

inline D relu(D x) {
  for (double& v : x.v) v = v > 0.0 ? v : 0.0;
  return x;
}

inline D channel_mask(const D& f, const D& z) {
  const std::int64_t n = f.dim(0), c = f.dim(1);
  const std::int64_t inner = f.numel() / (n * c);
  D y(f.shape);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double zv;
      if (z.shape.size() == 1) {
        zv = z[ch];
      } else if (z.dim(1) == 1 && c != 1) {
        zv = z[b];
      } else {
        zv = z[b * c + ch];
      }
      for (std::int64_t i = 0; i < inner; ++i) {
        y[(b * c + ch) * inner + i] = f[(b * c + ch) * inner + i] * zv;
      }
    }
  return y;
}

inline D global_avg_pool(const D& x) {
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  D y({n, c});
  for (std::int64_t k = 0; k < n * c; ++k) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) acc += x[k * hw + i];
    y[k] = acc / static_cast<double>(hw);
  }
  return y;
}

inline D linear(const D& x, const D& w, const D& b) {
  const std::int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  D y({n, out});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::int64_t i = 0; i < in; ++i) acc += x[r * in + i] * w[o * in + i];
      y[r * out + o] = acc;
    }
  return y;
}

inline double cross_entropy(const D& logits, const std::vector<int>& labels) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    double mx = -1e300;
    for (std::int64_t j = 0; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(logits[r * k + j] - mx);
    total += std::log(s) + mx - logits[r * k + labels[r]];
  }
  return total / static_cast<double>(n);
}

// Soft gate sample sigma((w1 + g1 - w0 - g0) / T) for logits [G,2] or
// [N,G,2] and noise [N,G,2]; returns [N,G].
inline D soft_gate(const D& logits, const D& noise, double temperature) {
  const std::int64_t n = noise.dim(0), g = noise.dim(1);
  const bool shared = logits.shape.size() == 2;
  D z({n, g});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < g; ++k) {
      const std::int64_t li = shared ? k : b * g + k;
      const double d = (logits[2 * li + 1] + noise[(b * g + k) * 2 + 1] -
                        logits[2 * li] - noise[(b * g + k) * 2]) /
                       temperature;
      z[b * g + k] = 1.0 / (1.0 + std::exp(-d));
    }
  return z;
}

inline double dot(const D& a, const D& b) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace shadow
}  // namespace chgate::testing
