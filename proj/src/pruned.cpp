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

#include "chgate/pruned.hpp"

#include <algorithm>
#include <cmath>

#include "chgate/error.hpp"
#include "chgate/inference.hpp"
#include "chgate/kernels.hpp"
#include "chgate/ops.hpp"
#include "chgate/rng.hpp"

namespace chgate {

namespace {

using nlohmann::json;

Tensor gather_channels(const Tensor& x, const std::vector<std::int64_t>& idx) {
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const auto k = static_cast<std::int64_t>(idx.size());
  Tensor out(Shape{n, k, x.dim(2), x.dim(3)});
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < k; ++j) {
      std::copy_n(x.ptr() + (r * c + idx[static_cast<std::size_t>(j)]) * plane,
                  plane, out.ptr() + (r * k + j) * plane);
    }
  }
  return out;
}

Tensor scatter_channels(const Tensor& x, const std::vector<std::int64_t>& idx,
                        std::int64_t full) {
  const std::int64_t n = x.dim(0), k = x.dim(1);
  const std::int64_t plane = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, full, x.dim(2), x.dim(3)});
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < k; ++j) {
      std::copy_n(x.ptr() + (r * k + j) * plane, plane,
                  out.ptr() + (r * full + idx[static_cast<std::size_t>(j)]) * plane);
    }
  }
  return out;
}

bool is_identity(const std::vector<std::int64_t>& idx, std::int64_t full) {
  if (static_cast<std::int64_t>(idx.size()) != full) return false;
  for (std::int64_t i = 0; i < full; ++i) {
    if (idx[static_cast<std::size_t>(i)] != i) return false;
  }
  return true;
}

// Applies conv + eval BN + ReLU to an input whose channels are exactly
// `c.in_keep`.
Tensor apply(const PrunedConv& c, const Tensor& x) {
  Tensor y = ops::conv2d(x, c.weight, c.stride, c.padding);
  ops::BatchNormState st(y.dim(1));
  st.running_mean = c.running_mean;
  st.running_var = c.running_var;
  st.epsilon = c.epsilon;
  y = ops::batch_norm(y, c.gamma, c.beta, st, ops::BnMode::kEval);
  return ops::relu(y);
}

PrunedConv slice_conv(const ConvBn& src, std::vector<std::int64_t> in_keep,
                      std::vector<std::int64_t> out_keep) {
  PrunedConv p;
  const std::int64_t cin = src.in_channels(), k = src.kernel();
  const std::int64_t area = k * k;
  const auto ni = static_cast<std::int64_t>(in_keep.size());
  const auto no = static_cast<std::int64_t>(out_keep.size());
  p.weight = Tensor(Shape{no, ni, k, k});
  p.gamma = Tensor(Shape{no});
  p.beta = Tensor(Shape{no});
  p.running_mean = Tensor(Shape{no});
  p.running_var = Tensor(Shape{no});
  for (std::int64_t o = 0; o < no; ++o) {
    const std::int64_t so = out_keep[static_cast<std::size_t>(o)];
    for (std::int64_t i = 0; i < ni; ++i) {
      const std::int64_t si = in_keep[static_cast<std::size_t>(i)];
      std::copy_n(src.weight.ptr() + (so * cin + si) * area, area,
                  p.weight.ptr() + (o * ni + i) * area);
    }
    p.gamma[o] = src.gamma[so];
    p.beta[o] = src.beta[so];
    p.running_mean[o] = src.bn.running_mean[so];
    p.running_var[o] = src.bn.running_var[so];
  }
  p.epsilon = src.bn.epsilon;
  p.stride = src.stride;
  p.padding = src.padding;
  p.in_keep = std::move(in_keep);
  p.out_keep = std::move(out_keep);
  return p;
}

json conv_json(const PrunedConv& c) {
  return {{"kernel", c.weight.dim(2)}, {"stride", c.stride},
          {"padding", c.padding},      {"epsilon", c.epsilon},
          {"in_keep", c.in_keep},      {"out_keep", c.out_keep}};
}

PrunedConv conv_from_json(const json& j, const Checkpoint& ck,
                          const std::string& name) {
  PrunedConv c;
  try {
    c.stride = j.at("stride").get<std::int64_t>();
    c.padding = j.at("padding").get<std::int64_t>();
    c.epsilon = j.at("epsilon").get<float>();
    c.in_keep = j.at("in_keep").get<std::vector<std::int64_t>>();
    c.out_keep = j.at("out_keep").get<std::vector<std::int64_t>>();
    const auto k = j.at("kernel").get<std::int64_t>();
    const auto no = static_cast<std::int64_t>(c.out_keep.size());
    const auto ni = static_cast<std::int64_t>(c.in_keep.size());
    auto take = [&](const std::string& n, const Shape& shape) {
      const Tensor& t = ck.at(name + n);
      if (t.shape() != shape) {
        throw FormatError("tensor '" + name + n + "' has shape " +
                          shape_str(t.shape()) + ", expected " +
                          shape_str(shape));
      }
      return t.clone();
    };
    c.weight = take(".weight", {no, ni, k, k});
    c.gamma = take(".bn.gamma", {no});
    c.beta = take(".bn.beta", {no});
    c.running_mean = take(".bn.running_mean", {no});
    c.running_var = take(".bn.running_var", {no});
  } catch (const json::exception& e) {
    throw FormatError("pruned layer '" + name + "': " + e.what());
  }
  return c;
}

void add_conv_tensors(std::vector<NamedTensor>& out, const std::string& name,
                      const PrunedConv& c) {
  out.push_back({name + ".weight", c.weight});
  out.push_back({name + ".bn.gamma", c.gamma});
  out.push_back({name + ".bn.beta", c.beta});
  out.push_back({name + ".bn.running_mean", c.running_mean});
  out.push_back({name + ".bn.running_var", c.running_var});
}

}  // namespace

Tensor PrunedNetwork::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_channels || x.dim(2) != image_size ||
      x.dim(3) != image_size) {
    throw ShapeError("pruned network expects input [N," +
                     std::to_string(in_channels) + "," +
                     std::to_string(image_size) + "," +
                     std::to_string(image_size) + "], got " +
                     shape_str(x.shape()));
  }
  Tensor h = apply(stem, x);
  for (const auto& b : blocks) {
    Tensor in = is_identity(b.conv1.in_keep, b.in_channels)
                    ? h
                    : gather_channels(h, b.conv1.in_keep);
    Tensor a = apply(b.conv3, apply(b.conv2, apply(b.conv1, in)));
    a = scatter_channels(a, b.conv3.out_keep, b.out_channels);
    Tensor sc = h;
    if (b.shortcut) {
      sc = scatter_channels(apply(*b.shortcut, h), b.shortcut->out_keep,
                            b.out_channels);
    }
    h = ops::add(a, sc);
  }
  return ops::linear(ops::global_avg_pool(h), fc_weight, fc_bias);
}

FlopsModel PrunedNetwork::flops_model() const {
  std::vector<LayerCost> layers;
  auto conv = [&](const std::string& id, const PrunedConv& c,
                  std::int64_t hw) {
    LayerCost l;
    l.layer_id = id;
    l.cin = static_cast<std::int64_t>(c.in_keep.size());
    l.cout = static_cast<std::int64_t>(c.out_keep.size());
    l.kh = l.kw = c.weight.dim(2);
    l.hout = l.wout = hw;
    l.pointwise_per_output = 3;
    layers.push_back(l);
  };
  std::int64_t size = image_size;
  conv("stem", stem, size);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const std::string bp = "block" + std::to_string(k);
    const std::int64_t out_size = conv_out_size(size, 3, b.stride, 1);
    conv(bp + ".conv1", b.conv1, size);
    conv(bp + ".conv2", b.conv2, out_size);
    conv(bp + ".conv3", b.conv3, out_size);
    if (b.shortcut) conv(bp + ".shortcut", *b.shortcut, out_size);
    LayerCost add;
    add.layer_id = bp + ".add";
    add.kind = LayerKind::kPointwise;
    add.cin = add.cout = b.out_channels;
    add.hout = add.wout = out_size;
    add.pointwise_per_output = 1;
    layers.push_back(add);
    size = out_size;
  }
  const std::int64_t feat = fc_weight.dim(1);
  LayerCost pool;
  pool.layer_id = "pool";
  pool.kind = LayerKind::kPointwise;
  pool.cin = pool.cout = feat;
  pool.hout = pool.wout = size;
  pool.pointwise_per_output = 1;
  layers.push_back(pool);
  LayerCost fc;
  fc.layer_id = "fc";
  fc.kind = LayerKind::kLinear;
  fc.cin = feat;
  fc.cout = num_classes;
  fc.pointwise_per_output = 1;
  layers.push_back(fc);
  return FlopsModel(std::move(layers), 0);
}

json PrunedNetwork::structure_json() const {
  json blocks_j = json::array();
  for (const auto& b : blocks) {
    blocks_j.push_back({{"in_channels", b.in_channels},
                        {"mid_channels", b.mid_channels},
                        {"out_channels", b.out_channels},
                        {"stride", b.stride},
                        {"conv1", conv_json(b.conv1)},
                        {"conv2", conv_json(b.conv2)},
                        {"conv3", conv_json(b.conv3)},
                        {"shortcut", b.shortcut ? conv_json(*b.shortcut)
                                                : json(nullptr)}});
  }
  return {{"in_channels", in_channels}, {"image_size", image_size},
          {"num_classes", num_classes}, {"stem", conv_json(stem)},
          {"blocks", blocks_j}};
}

std::vector<NamedTensor> PrunedNetwork::state_tensors() const {
  std::vector<NamedTensor> out;
  add_conv_tensors(out, "stem", stem);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const std::string bp = "block" + std::to_string(k);
    add_conv_tensors(out, bp + ".conv1", b.conv1);
    add_conv_tensors(out, bp + ".conv2", b.conv2);
    add_conv_tensors(out, bp + ".conv3", b.conv3);
    if (b.shortcut) add_conv_tensors(out, bp + ".shortcut", *b.shortcut);
  }
  out.push_back({"fc.weight", fc_weight});
  out.push_back({"fc.bias", fc_bias});
  return out;
}

void PrunedNetwork::save(const std::filesystem::path& path) const {
  const json meta = {{"format", "chgate.pruned"}, {"network", structure_json()}};
  const auto tensors = state_tensors();
  write_checkpoint(path, tensors, meta);
}

PrunedNetwork PrunedNetwork::load(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  if (!ck.meta.is_object() || ck.meta.value("format", "") != "chgate.pruned") {
    throw FormatError(path.string() + " is not a pruned network checkpoint");
  }
  PrunedNetwork p;
  try {
    const json& j = ck.meta.at("network");
    p.in_channels = j.at("in_channels").get<std::int64_t>();
    p.image_size = j.at("image_size").get<std::int64_t>();
    p.num_classes = j.at("num_classes").get<std::int64_t>();
    p.stem = conv_from_json(j.at("stem"), ck, "stem");
    const json& blocks_j = j.at("blocks");
    for (std::size_t k = 0; k < blocks_j.size(); ++k) {
      const json& bj = blocks_j[k];
      const std::string bp = "block" + std::to_string(k);
      PrunedBlock b;
      b.in_channels = bj.at("in_channels").get<std::int64_t>();
      b.mid_channels = bj.at("mid_channels").get<std::int64_t>();
      b.out_channels = bj.at("out_channels").get<std::int64_t>();
      b.stride = bj.at("stride").get<std::int64_t>();
      b.conv1 = conv_from_json(bj.at("conv1"), ck, bp + ".conv1");
      b.conv2 = conv_from_json(bj.at("conv2"), ck, bp + ".conv2");
      b.conv3 = conv_from_json(bj.at("conv3"), ck, bp + ".conv3");
      if (!bj.at("shortcut").is_null()) {
        b.shortcut = conv_from_json(bj.at("shortcut"), ck, bp + ".shortcut");
      }
      p.blocks.push_back(std::move(b));
    }
    p.fc_weight = ck.at("fc.weight").clone();
    p.fc_bias = ck.at("fc.bias").clone();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (p.fc_weight.rank() != 2 || p.fc_weight.dim(0) != p.num_classes ||
      p.fc_bias.numel() != p.num_classes) {
    throw FormatError(path.string() + ": classifier shape mismatch");
  }
  return p;
}

PrunedNetwork export_pruned_network(const GatedNetwork& net, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw ValueError("tau must lie in [0,1], got " + std::to_string(tau));
  }
  if (net.has_dependent_gates()) {
    throw ValueError("only data-independent gates can be pruned away");
  }
  const std::vector<double> p =
      net.num_gates() > 0 ? net.independent_probabilities() : std::vector<double>{};
  std::vector<std::string> degenerate;
  auto kept = [&](const GatedBlock& b, SiteKind s, std::int64_t channels,
                  const std::string& layer) {
    const SiteGates* site = b.site(s);
    std::vector<std::int64_t> keep;
    for (std::int64_t c = 0; c < channels; ++c) {
      bool on = true;
      if (site != nullptr) {
        const std::int64_t g = site->first_gate + (site->per_layer() ? 0 : c);
        on = p[static_cast<std::size_t>(g)] > tau;
      }
      if (on) keep.push_back(c);
    }
    if (keep.empty()) degenerate.push_back(layer);
    return keep;
  };
  PrunedNetwork out;
  const NetworkSpec& spec = net.spec();
  out.in_channels = spec.in_channels;
  out.image_size = spec.image_size;
  out.num_classes = spec.num_classes;
  out.stem = slice_conv(net.stem(), kernels::iota_channels(spec.in_channels),
                        kernels::iota_channels(spec.stem_channels));
  for (std::size_t k = 0; k < net.blocks().size(); ++k) {
    const GatedBlock& b = net.blocks()[k];
    const std::string bp = "block" + std::to_string(k);
    const auto in_keep =
        kept(b, SiteKind::kInput, b.spec.in_channels, bp + ".conv1 input");
    const auto c1 = kept(b, SiteKind::kConv1, b.spec.mid_channels, bp + ".conv1");
    const auto c2 = kept(b, SiteKind::kConv2, b.spec.mid_channels, bp + ".conv2");
    const auto o = kept(b, SiteKind::kOutput, b.spec.out_channels, bp + ".conv3");
    std::vector<std::int64_t> sc_keep;
    if (b.shortcut) {
      sc_keep = kept(b, SiteKind::kShortcut, b.spec.out_channels,
                     bp + ".shortcut");
    }
    if (!degenerate.empty()) continue;
    PrunedBlock pb;
    pb.in_channels = b.spec.in_channels;
    pb.mid_channels = b.spec.mid_channels;
    pb.out_channels = b.spec.out_channels;
    pb.stride = b.spec.stride;
    pb.conv1 = slice_conv(b.conv1, in_keep, c1);
    pb.conv2 = slice_conv(b.conv2, c1, c2);
    pb.conv3 = slice_conv(b.conv3, c2, o);
    if (b.shortcut) {
      pb.shortcut = slice_conv(*b.shortcut,
                               kernels::iota_channels(b.spec.in_channels),
                               sc_keep);
    }
    out.blocks.push_back(std::move(pb));
  }
  if (!degenerate.empty()) {
    std::string msg = "pruning at tau=" + std::to_string(tau) +
                      " removes every channel of:";
    for (const auto& d : degenerate) msg += " " + d;
    throw ValueError(msg);
  }
  out.fc_weight = net.fc_weight().clone();
  out.fc_bias = net.fc_bias().clone();
  return out;
}

json VerifyReport::to_json() const {
  return {{"inputs", inputs},
          {"tau", tau},
          {"tolerance", tolerance},
          {"max_abs_diff", max_abs_diff},
          {"label_agreement", label_agreement},
          {"original_max_flops", original_max_flops},
          {"pruned_max_flops", pruned_max_flops},
          {"thresholded_flops", thresholded_flops},
          {"passed", passed}};
}

VerifyReport verify_pruned_equivalence(GatedNetwork& original,
                                       const PrunedNetwork& pruned, double tau,
                                       std::int64_t n, double tol,
                                       std::uint64_t seed) {
  if (n < 1) throw ValueError("verification needs at least one input");
  VerifyReport rep;
  rep.inputs = n;
  rep.tau = tau;
  rep.tolerance = tol;
  rep.original_max_flops = original.flops_model().max_flops();
  rep.pruned_max_flops = pruned.max_flops();
  const NetworkSpec& spec = original.spec();
  RngStream rng = RngStream::derive(seed, StreamFamily::kVerify);
  constexpr std::int64_t kChunk = 50;
  double flops_sum = 0.0;
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const std::int64_t m = std::min(kChunk, n - start);
    Tensor x(Shape{m, spec.in_channels, spec.image_size, spec.image_size});
    for (float& v : x.data()) v = static_cast<float>(rng.normal());
    ForwardOptions o;
    o.gates = GateMode::kThreshold;
    o.tau = tau;
    ForwardResult ref = original.forward(x, o);
    Tensor got = pruned.forward(x);
    if (got.shape() != ref.logits.shape()) {
      throw ShapeError("pruned logits " + shape_str(got.shape()) +
                       " do not match original " +
                       shape_str(ref.logits.shape()));
    }
    for (std::int64_t i = 0; i < got.numel(); ++i) {
      const double d = std::abs(static_cast<double>(got[i]) - ref.logits[i]);
      rep.max_abs_diff = std::isnan(d) ? INFINITY : std::max(rep.max_abs_diff, d);
    }
    const auto a = argmax_rows(got);
    const auto b = argmax_rows(ref.logits);
    for (std::size_t i = 0; i < a.size(); ++i) rep.label_agreement += a[i] == b[i];
    if (ref.z.defined()) {
      for (double f : original.flops_model().realized_per_sample(ref.z)) flops_sum += f;
    } else {
      flops_sum += static_cast<double>(rep.original_max_flops * m);
    }
  }
  rep.thresholded_flops = flops_sum / static_cast<double>(n);
  rep.passed = rep.max_abs_diff <= tol;
  return rep;
}

}  // namespace chgate
