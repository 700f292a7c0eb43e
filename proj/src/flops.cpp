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

#include "chgate/flops.hpp"

#include "chgate/error.hpp"
#include "chgate/tape.hpp"

namespace chgate {

std::int64_t conv_flops(std::int64_t cin, std::int64_t cout, std::int64_t kh,
                        std::int64_t kw, std::int64_t hout, std::int64_t wout) {
  return 2 * cin * cout * kh * kw * hout * wout;
}

std::int64_t LayerCost::max_flops() const {
  const std::int64_t pw = pointwise_per_output * cout * hout * wout;
  if (kind == LayerKind::kPointwise) return pw;
  return conv_flops(cin, cout, kh, kw, hout, wout) + pw;
}

double LayerCost::cost(double n_in, double n_out) const {
  const double hw = static_cast<double>(hout * wout);
  const double pw = static_cast<double>(pointwise_per_output) * n_out * hw;
  if (kind == LayerKind::kPointwise) return pw;
  return 2.0 * n_in * n_out * static_cast<double>(kh * kw) * hw + pw;
}

FlopsModel::FlopsModel(std::vector<LayerCost> layers, std::int64_t num_gates)
    : layers_(std::move(layers)), num_gates_(num_gates) {
  for (const auto& l : layers_) {
    if (l.cin <= 0 || l.cout <= 0 || l.kh <= 0 || l.kw <= 0 || l.hout <= 0 ||
        l.wout <= 0 || l.pointwise_per_output < 0) {
      throw ValueError("layer " + l.layer_id + " has a non-positive size");
    }
    if (l.kind == LayerKind::kPointwise && l.gated()) {
      throw ValueError("pointwise layer " + l.layer_id + " cannot be gated");
    }
    for (const auto* site : {&l.in_site, &l.out_site}) {
      if (!site->has_value()) continue;
      const GateSite& s = **site;
      const std::int64_t expect_channels = site == &l.in_site ? l.cin : l.cout;
      if (s.channels != expect_channels ||
          s.num_gates != (s.per_layer ? 1 : s.channels) || s.first_gate < 0 ||
          s.first_gate + s.num_gates > num_gates_) {
        throw ValueError("inconsistent gate site on layer " + l.layer_id);
      }
    }
  }
}

std::int64_t FlopsModel::max_flops() const {
  std::int64_t total = 0;
  for (const auto& l : layers_) total += l.max_flops();
  return total;
}

std::int64_t FlopsModel::ungated_floor() const {
  std::int64_t total = 0;
  for (const auto& l : layers_) {
    if (!l.gated()) {
      total += l.max_flops();
    } else if (!l.out_site) {
      // Output-side pointwise work of a layer gated only on its input.
      total += l.pointwise_per_output * l.cout * l.hout * l.wout;
    }
  }
  return total;
}

std::vector<double> FlopsModel::flop_weights() const {
  std::vector<double> w(static_cast<std::size_t>(num_gates_), 0.0);
  for (const auto& l : layers_) {
    if (!l.gated()) continue;
    const std::int64_t hw = l.hout * l.wout;
    const std::int64_t product = conv_flops(l.cin, l.cout, l.kh, l.kw, l.hout,
                                            l.wout);
    const bool both = l.in_site && l.out_site;
    // `product` is even, so the half split stays integral.
    const std::int64_t share = both ? product / 2 : product;
    if (l.in_site) {
      const GateSite& s = *l.in_site;
      const std::int64_t per = share / s.num_gates;
      for (std::int64_t g = 0; g < s.num_gates; ++g) w[s.first_gate + g] += per;
    }
    if (l.out_site) {
      const GateSite& s = *l.out_site;
      const std::int64_t pw = l.pointwise_per_output * l.cout * hw;
      const std::int64_t per = (share + pw) / s.num_gates;
      for (std::int64_t g = 0; g < s.num_gates; ++g) w[s.first_gate + g] += per;
    }
  }
  return w;
}

double FlopsModel::active(const std::optional<GateSite>& site,
                          std::int64_t full, std::span<const float> z) const {
  if (!site) return static_cast<double>(full);
  if (site->per_layer) {
    return static_cast<double>(site->channels) * z[site->first_gate];
  }
  double n = 0.0;
  for (std::int64_t g = 0; g < site->num_gates; ++g) n += z[site->first_gate + g];
  return n;
}

double FlopsModel::realized(std::span<const float> z) const {
  if (static_cast<std::int64_t>(z.size()) != num_gates_) {
    throw ShapeError("expected " + std::to_string(num_gates_) +
                     " gate values, got " + std::to_string(z.size()));
  }
  double total = 0.0;
  for (const auto& l : layers_) {
    total += l.cost(active(l.in_site, l.cin, z), active(l.out_site, l.cout, z));
  }
  return total;
}

std::vector<double> FlopsModel::realized_per_sample(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != num_gates_) {
    throw ShapeError("gate values must be [B," + std::to_string(num_gates_) +
                     "], got " + shape_str(z.shape()));
  }
  const std::int64_t b = z.dim(0);
  std::vector<double> out(static_cast<std::size_t>(b));
  for (std::int64_t n = 0; n < b; ++n) {
    out[n] = realized(z.data().subspan(n * num_gates_, num_gates_));
  }
  return out;
}

double FlopsModel::expected(std::span<const double> p) const {
  double total = 0.0;
  for (double v : expected_per_layer(p)) total += v;
  return total;
}

std::vector<double> FlopsModel::expected_per_layer(
    std::span<const double> p) const {
  if (static_cast<std::int64_t>(p.size()) != num_gates_) {
    throw ShapeError("expected " + std::to_string(num_gates_) +
                     " probabilities, got " + std::to_string(p.size()));
  }
  // Input and output sites of one layer hold distinct gates, so the
  // expectation of the bilinear term factorizes.
  auto mean_active = [&](const std::optional<GateSite>& site,
                         std::int64_t full) {
    if (!site) return static_cast<double>(full);
    if (site->per_layer) {
      return static_cast<double>(site->channels) * p[site->first_gate];
    }
    double n = 0.0;
    for (std::int64_t g = 0; g < site->num_gates; ++g) {
      n += p[site->first_gate + g];
    }
    return n;
  };
  std::vector<double> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) {
    out.push_back(
        l.cost(mean_active(l.in_site, l.cin), mean_active(l.out_site, l.cout)));
  }
  return out;
}

Tensor FlopsModel::realized_op(const Tensor& z) const {
  const auto costs = realized_per_sample(z);
  const std::int64_t b = z.dim(0);
  Tensor out(Shape{b});
  for (std::int64_t n = 0; n < b; ++n) out[n] = static_cast<float>(costs[n]);
  if (Tape::tracking({&z})) {
    Tape::current()->record(out, {&z}, [this_model = *this, z,
                                        b](std::span<const float> gy) {
      auto gz = grad_buffer(z);
      const std::int64_t g_count = this_model.num_gates_;
      for (std::int64_t n = 0; n < b; ++n) {
        auto row = z.data().subspan(n * g_count, g_count);
        float* grow = gz.data() + n * g_count;
        for (const auto& l : this_model.layers_) {
          if (!l.gated()) continue;
          const double n_in = this_model.active(l.in_site, l.cin, row);
          const double n_out = this_model.active(l.out_site, l.cout, row);
          const double khw = static_cast<double>(l.kh * l.kw * l.hout * l.wout);
          const double hw = static_cast<double>(l.hout * l.wout);
          // d cost / d n_in and d cost / d n_out.
          const double d_in = 2.0 * n_out * khw;
          const double d_out = 2.0 * n_in * khw +
                               static_cast<double>(l.pointwise_per_output) * hw;
          auto route = [&](const GateSite& s, double d) {
            if (s.per_layer) {
              grow[s.first_gate] += static_cast<float>(
                  gy[n] * d * static_cast<double>(s.channels));
            } else {
              for (std::int64_t k = 0; k < s.num_gates; ++k) {
                grow[s.first_gate + k] += static_cast<float>(gy[n] * d);
              }
            }
          };
          if (l.in_site) route(*l.in_site, d_in);
          if (l.out_site) route(*l.out_site, d_out);
        }
      }
    });
  }
  return out;
}

void FlopsModel::write_report_csv(std::ostream& out,
                                  std::span<const double> p) const {
  std::vector<double> expected;
  if (!p.empty()) expected = expected_per_layer(p);
  out << "layer_id,Cin,Cout,Kh,Kw,Hout,Wout,max_flops,expected_flops\n";
  out.precision(17);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    out << l.layer_id << ',' << l.cin << ',' << l.cout << ',' << l.kh << ','
        << l.kw << ',' << l.hout << ',' << l.wout << ',' << l.max_flops()
        << ',';
    if (!expected.empty()) out << expected[i];
    out << '\n';
  }
}

}  // namespace chgate
