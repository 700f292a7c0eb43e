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

#include "chgate/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "chgate/error.hpp"
#include "chgate/kernels.hpp"
#include "chgate/rng.hpp"
#include "chgate/tape.hpp"

namespace chgate {

namespace {

using nlohmann::json;

constexpr SiteKind kSiteOrder[] = {SiteKind::kInput, SiteKind::kConv1,
                                   SiteKind::kConv2, SiteKind::kOutput,
                                   SiteKind::kShortcut};

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) {
    throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where +
                      ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return get_field<T>(j, key, where);
}

ConvBn make_conv_bn(std::int64_t cin, std::int64_t cout, std::int64_t k,
                    std::int64_t stride, std::int64_t padding,
                    const BuildOptions& opt, std::uint64_t init_key) {
  ConvBn c;
  c.weight = Tensor(Shape{cout, cin, k, k});
  const double sd = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  RngStream rng = RngStream::derive(opt.seed, StreamFamily::kInit, {init_key});
  for (float& v : c.weight.data()) v = static_cast<float>(sd * rng.normal());
  c.gamma = Tensor(Shape{cout}, 1.0f);
  c.beta = Tensor(Shape{cout}, 0.0f);
  c.bn = ops::BatchNormState(cout);
  c.bn.momentum = opt.bn_momentum;
  c.bn.epsilon = opt.bn_epsilon;
  c.stride = stride;
  c.padding = padding;
  return c;
}

Tensor conv_bn_relu(const Tensor& x, ConvBn& c, bool train) {
  Tensor y = ops::conv2d(x, c.weight, c.stride, c.padding);
  y = ops::batch_norm(y, c.gamma, c.beta, c.bn,
                      train ? ops::BnMode::kTrain : ops::BnMode::kEval);
  return ops::relu(y);
}

std::string site_prefix(int block, SiteKind s) {
  return "block" + std::to_string(block) + "." + to_string(s);
}

// Skip-path conv + eval BN + ReLU over one image. Channels outside
// `out_list` stay +0, which is what the masked path produces for them.
void skip_conv_bn_relu(const ConvBn& c, const kernels::ConvGeometry& g,
                       const float* x, float* y,
                       std::span<const std::int64_t> in_list,
                       std::span<const std::int64_t> out_list,
                       std::vector<float>& col) {
  kernels::conv2d_forward_image(g, x, c.weight.ptr(), y, in_list, out_list,
                                col);
  const std::int64_t plane = g.out_plane();
  for (std::int64_t o : out_list) {
    const ops::BnAffine aff =
        ops::bn_eval_affine(c.gamma[o], c.beta[o], c.bn.running_mean[o],
                            c.bn.running_var[o], c.bn.epsilon);
    float* p = y + o * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      p[i] = ops::relu_value(p[i] * aff.scale + aff.shift);
    }
  }
}

// Channels of a site that are on for sample n. z_site is [N,count].
std::vector<std::int64_t> on_channels(const SiteGates* site, const Tensor& z,
                                      std::int64_t n, std::int64_t channels) {
  if (site == nullptr) return kernels::iota_channels(channels);
  std::vector<std::int64_t> out;
  if (site->per_layer()) {
    if (z[n] != 0.0f) out = kernels::iota_channels(channels);
    return out;
  }
  for (std::int64_t c = 0; c < channels; ++c) {
    if (z[n * site->count + c] != 0.0f) out.push_back(c);
  }
  return out;
}

}  // namespace

const char* to_string(Granularity g) {
  return g == Granularity::kPerChannel ? "per_channel" : "per_layer";
}

const char* to_string(SiteKind s) {
  switch (s) {
    case SiteKind::kInput: return "input";
    case SiteKind::kConv1: return "conv1";
    case SiteKind::kConv2: return "conv2";
    case SiteKind::kOutput: return "output";
    case SiteKind::kShortcut: return "shortcut";
  }
  return "?";
}

const char* to_string(GateMode m) {
  switch (m) {
    case GateMode::kNone: return "none";
    case GateMode::kSample: return "sample";
    case GateMode::kThreshold: return "threshold";
    case GateMode::kAllOn: return "all_on";
    case GateMode::kForced: return "forced";
  }
  return "?";
}

Granularity parse_granularity(const std::string& s) {
  if (s == "per_channel" || s == "channel") return Granularity::kPerChannel;
  if (s == "per_layer" || s == "layer") return Granularity::kPerLayer;
  throw ConfigError("unknown gate granularity '" + s + "'");
}

SiteKind parse_site_kind(const std::string& s) {
  for (SiteKind k : kSiteOrder) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown mask site '" + s + "'");
}

std::int64_t GatedBlockSpec::site_channels(SiteKind s) const {
  switch (s) {
    case SiteKind::kInput: return in_channels;
    case SiteKind::kConv1:
    case SiteKind::kConv2: return mid_channels;
    case SiteKind::kOutput:
    case SiteKind::kShortcut: return out_channels;
  }
  return 0;
}

const MaskSiteSpec* GatedBlockSpec::find_site(SiteKind s) const {
  for (const auto& m : mask_sites) {
    if (m.site == s) return &m;
  }
  return nullptr;
}

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel,
                           std::int64_t stride, std::int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

void NetworkSpec::validate() const {
  auto positive = [](std::int64_t v, const std::string& what) {
    if (v <= 0) {
      throw ConfigError(what + " must be positive, got " + std::to_string(v));
    }
  };
  positive(in_channels, "in_channels");
  positive(image_size, "image_size");
  positive(stem_channels, "stem_channels");
  positive(stem_kernel, "stem_kernel");
  if (stem_kernel % 2 == 0) throw ConfigError("stem_kernel must be odd");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  std::int64_t channels = stem_channels;
  std::int64_t size = image_size;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto& b = blocks[k];
    const std::string where = "block " + std::to_string(k);
    positive(b.in_channels, where + " in_channels");
    positive(b.mid_channels, where + " mid_channels");
    positive(b.out_channels, where + " out_channels");
    if (b.stride != 1 && b.stride != 2) {
      throw ConfigError(where + " stride must be 1 or 2");
    }
    if (b.in_channels != channels) {
      throw ConfigError(where + " expects " + std::to_string(b.in_channels) +
                        " input channels but receives " +
                        std::to_string(channels));
    }
    std::set<SiteKind> seen;
    for (const auto& m : b.mask_sites) {
      if (!seen.insert(m.site).second) {
        throw ConfigError(where + " lists mask site '" +
                          std::string(to_string(m.site)) + "' twice");
      }
      if (m.site == SiteKind::kShortcut && !b.has_projection()) {
        throw ConfigError(where +
                          " has an identity shortcut, which cannot be masked");
      }
    }
    size = conv_out_size(size, 3, b.stride, 1);
    if (size < 1) throw ConfigError(where + " reduces the image below 1x1");
    channels = b.out_channels;
  }
}

json NetworkSpec::to_json() const {
  json blocks_j = json::array();
  for (const auto& b : blocks) {
    json sites = json::array();
    for (const auto& m : b.mask_sites) {
      sites.push_back({{"site", to_string(m.site)},
                       {"granularity", to_string(m.granularity)},
                       {"kind", to_string(m.kind)}});
    }
    blocks_j.push_back({{"in_channels", b.in_channels},
                        {"mid_channels", b.mid_channels},
                        {"out_channels", b.out_channels},
                        {"stride", b.stride},
                        {"mask_sites", sites}});
  }
  return {{"in_channels", in_channels},   {"image_size", image_size},
          {"stem_channels", stem_channels}, {"stem_kernel", stem_kernel},
          {"num_classes", num_classes},   {"blocks", blocks_j}};
}

NetworkSpec NetworkSpec::from_json(const json& j) {
  const std::string where = "network spec";
  check_keys(j,
             {"in_channels", "image_size", "stem_channels", "stem_kernel",
              "num_classes", "blocks"},
             where);
  NetworkSpec s;
  s.in_channels = get_field<std::int64_t>(j, "in_channels", where);
  s.image_size = get_field<std::int64_t>(j, "image_size", where);
  s.stem_channels = get_field<std::int64_t>(j, "stem_channels", where);
  s.stem_kernel = get_or<std::int64_t>(j, "stem_kernel", 3, where);
  s.num_classes = get_field<std::int64_t>(j, "num_classes", where);
  const json blocks_j = get_field<json>(j, "blocks", where);
  if (!blocks_j.is_array()) throw ConfigError("'blocks' must be an array");
  for (std::size_t k = 0; k < blocks_j.size(); ++k) {
    const json& bj = blocks_j[k];
    const std::string bw = "block " + std::to_string(k);
    check_keys(bj,
               {"in_channels", "mid_channels", "out_channels", "stride",
                "mask_sites"},
               bw);
    GatedBlockSpec b;
    b.in_channels = get_field<std::int64_t>(bj, "in_channels", bw);
    b.mid_channels = get_field<std::int64_t>(bj, "mid_channels", bw);
    b.out_channels = get_field<std::int64_t>(bj, "out_channels", bw);
    b.stride = get_or<std::int64_t>(bj, "stride", 1, bw);
    const json sites = get_or<json>(bj, "mask_sites", json::array(), bw);
    if (!sites.is_array()) throw ConfigError("'mask_sites' must be an array");
    for (const json& mj : sites) {
      check_keys(mj, {"site", "granularity", "kind"}, bw + " mask site");
      MaskSiteSpec m;
      m.site = parse_site_kind(get_field<std::string>(mj, "site", bw));
      m.granularity = parse_granularity(
          get_or<std::string>(mj, "granularity", "per_channel", bw));
      try {
        m.kind = parse_gate_kind(
            get_or<std::string>(mj, "kind", "independent", bw));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      b.mask_sites.push_back(m);
    }
    s.blocks.push_back(std::move(b));
  }
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::reference(std::int64_t num_classes,
                                   std::int64_t image_size,
                                   std::int64_t in_channels) {
  NetworkSpec s;
  s.in_channels = in_channels;
  s.image_size = image_size;
  s.stem_channels = 16;
  s.stem_kernel = 3;
  s.num_classes = num_classes;
  s.blocks = {{16, 16, 16, 1, {}}, {16, 16, 16, 2, {}}, {16, 32, 32, 1, {}}};
  return s;
}

NetworkSpec with_gating(NetworkSpec spec, Granularity granularity,
                        GateKind kind) {
  for (auto& b : spec.blocks) {
    b.mask_sites.clear();
    for (SiteKind s : kSiteOrder) {
      if (s == SiteKind::kShortcut && !b.has_projection()) continue;
      b.mask_sites.push_back({s, granularity, kind});
    }
  }
  return spec;
}

NetworkSpec without_gating(NetworkSpec spec) {
  for (auto& b : spec.blocks) b.mask_sites.clear();
  return spec;
}

json BuildOptions::to_json() const {
  return {{"seed", seed},
          {"gate_init_p", gate_init_p},
          {"head_hidden", head_hidden},
          {"bn_momentum", bn_momentum},
          {"bn_epsilon", bn_epsilon}};
}

BuildOptions BuildOptions::from_json(const json& j) {
  const std::string where = "build options";
  check_keys(j,
             {"seed", "gate_init_p", "head_hidden", "bn_momentum",
              "bn_epsilon"},
             where);
  BuildOptions o;
  o.seed = get_or<std::uint64_t>(j, "seed", o.seed, where);
  o.gate_init_p = get_or<double>(j, "gate_init_p", o.gate_init_p, where);
  o.head_hidden = get_or<std::int64_t>(j, "head_hidden", o.head_hidden, where);
  o.bn_momentum = get_or<float>(j, "bn_momentum", o.bn_momentum, where);
  o.bn_epsilon = get_or<float>(j, "bn_epsilon", o.bn_epsilon, where);
  return o;
}

GatedNetwork GatedNetwork::build(const NetworkSpec& spec,
                                 const BuildOptions& options) {
  spec.validate();
  if (!(options.gate_init_p > 0.0 && options.gate_init_p < 1.0)) {
    throw ConfigError("gate_init_p must lie strictly between 0 and 1");
  }
  if (options.head_hidden <= 0) throw ConfigError("head_hidden must be positive");
  GatedNetwork net;
  net.spec_ = spec;
  net.options_ = options;
  std::uint64_t key = 0;
  net.stem_ = make_conv_bn(spec.in_channels, spec.stem_channels,
                           spec.stem_kernel, 1, spec.stem_kernel / 2, options,
                           key++);
  const float on = static_cast<float>(logit_for_probability(options.gate_init_p));
  std::int64_t next_gate = 0;
  for (std::size_t k = 0; k < spec.blocks.size(); ++k) {
    const GatedBlockSpec& bs = spec.blocks[k];
    GatedBlock b;
    b.spec = bs;
    b.conv1 = make_conv_bn(bs.in_channels, bs.mid_channels, 1, 1, 0, options,
                           key++);
    b.conv2 = make_conv_bn(bs.mid_channels, bs.mid_channels, 3, bs.stride, 1,
                           options, key++);
    b.conv3 = make_conv_bn(bs.mid_channels, bs.out_channels, 1, 1, 0, options,
                           key++);
    if (bs.has_projection()) {
      b.shortcut = make_conv_bn(bs.in_channels, bs.out_channels, 1, bs.stride,
                                0, options, key++);
    } else {
      ++key;
    }
    std::int64_t head_gates = 0;
    for (SiteKind s : kSiteOrder) {
      const MaskSiteSpec* m = bs.find_site(s);
      if (m == nullptr) continue;
      SiteGates sg;
      sg.spec = *m;
      sg.channels = bs.site_channels(s);
      sg.count = m->granularity == Granularity::kPerLayer ? 1 : sg.channels;
      sg.first_gate = next_gate;
      next_gate += sg.count;
      if (m->kind == GateKind::kIndependent) {
        sg.logits = Tensor(Shape{sg.count, 2});
        for (std::int64_t g = 0; g < sg.count; ++g) sg.logits[2 * g + 1] = on;
      } else {
        sg.head_offset = head_gates;
        head_gates += sg.count;
      }
      b.site_index[static_cast<int>(s)] = static_cast<int>(b.sites.size());
      b.sites.push_back(std::move(sg));
    }
    if (head_gates > 0) {
      GateHead head(bs.in_channels, options.head_hidden, head_gates);
      head.bn.momentum = options.bn_momentum;
      head.bn.epsilon = options.bn_epsilon;
      RngStream rng = RngStream::derive(options.seed, StreamFamily::kInit,
                                        {1000 + static_cast<std::uint64_t>(k)});
      head.initialize(rng, options.gate_init_p);
      b.head = std::move(head);
    }
    net.blocks_.push_back(std::move(b));
  }
  const std::int64_t feat =
      spec.blocks.empty() ? spec.stem_channels : spec.blocks.back().out_channels;
  net.fc_weight_ = Tensor(Shape{spec.num_classes, feat});
  RngStream rng = RngStream::derive(options.seed, StreamFamily::kInit, {key});
  const double sd = std::sqrt(1.0 / static_cast<double>(feat));
  for (float& v : net.fc_weight_.data()) v = static_cast<float>(sd * rng.normal());
  net.fc_bias_ = Tensor(Shape{spec.num_classes});
  net.collect_parameters();
  net.build_registry_and_flops();
  return net;
}

void GatedNetwork::collect_parameters() {
  params_.clear();
  auto add_conv = [&](const std::string& name, ConvBn& c) {
    params_.emplace_back(name + ".weight", c.weight);
    params_.emplace_back(name + ".bn.gamma", c.gamma);
    params_.emplace_back(name + ".bn.beta", c.beta);
  };
  add_conv("stem", stem_);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    GatedBlock& b = blocks_[k];
    const std::string bp = "block" + std::to_string(k);
    add_conv(bp + ".conv1", b.conv1);
    add_conv(bp + ".conv2", b.conv2);
    add_conv(bp + ".conv3", b.conv3);
    if (b.shortcut) add_conv(bp + ".shortcut", *b.shortcut);
    for (auto& s : b.sites) {
      if (s.spec.kind != GateKind::kIndependent) continue;
      params_.emplace_back(site_prefix(static_cast<int>(k), s.spec.site) +
                               ".gate_logits",
                           s.logits);
      params_.back().is_gate = true;
    }
    if (b.head) {
      const std::string hp = "gate." + bp + ".head";
      params_.emplace_back(hp + ".fc1.weight", b.head->fc1_weight);
      params_.emplace_back(hp + ".fc1.bias", b.head->fc1_bias);
      params_.emplace_back(hp + ".bn.gamma", b.head->bn_gamma);
      params_.emplace_back(hp + ".bn.beta", b.head->bn_beta);
      params_.emplace_back(hp + ".fc2.weight", b.head->fc2_weight);
      params_.emplace_back(hp + ".fc2.bias", b.head->fc2_bias);
    }
  }
  params_.emplace_back("fc.weight", fc_weight_);
  params_.emplace_back("fc.bias", fc_bias_);
}

void GatedNetwork::build_registry_and_flops() {
  std::vector<LayerCost> layers;
  auto gate_site = [](const SiteGates* s) -> std::optional<GateSite> {
    if (s == nullptr) return std::nullopt;
    return GateSite{s->first_gate, s->count, s->channels, s->per_layer()};
  };
  std::int64_t size = spec_.image_size;
  std::int64_t channels = spec_.stem_channels;
  {
    LayerCost l;
    l.layer_id = "stem";
    l.cin = spec_.in_channels;
    l.cout = spec_.stem_channels;
    l.kh = l.kw = spec_.stem_kernel;
    l.hout = l.wout = size;
    l.pointwise_per_output = 3;
    layers.push_back(l);
  }
  std::int64_t num_gates = 0;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const GatedBlock& b = blocks_[k];
    const std::string bp = "block" + std::to_string(k);
    const std::int64_t out_size = conv_out_size(size, 3, b.spec.stride, 1);
    auto conv = [&](const std::string& name, std::int64_t cin,
                    std::int64_t cout, std::int64_t kernel, std::int64_t hw,
                    const SiteGates* in, const SiteGates* out) {
      LayerCost l;
      l.layer_id = bp + "." + name;
      l.cin = cin;
      l.cout = cout;
      l.kh = l.kw = kernel;
      l.hout = l.wout = hw;
      l.in_site = gate_site(in);
      l.out_site = gate_site(out);
      l.pointwise_per_output = 3;
      layers.push_back(l);
    };
    conv("conv1", b.spec.in_channels, b.spec.mid_channels, 1, size,
         b.site(SiteKind::kInput), b.site(SiteKind::kConv1));
    conv("conv2", b.spec.mid_channels, b.spec.mid_channels, 3, out_size,
         b.site(SiteKind::kConv1), b.site(SiteKind::kConv2));
    conv("conv3", b.spec.mid_channels, b.spec.out_channels, 1, out_size,
         b.site(SiteKind::kConv2), b.site(SiteKind::kOutput));
    if (b.shortcut) {
      conv("shortcut", b.spec.in_channels, b.spec.out_channels, 1, out_size,
           nullptr, b.site(SiteKind::kShortcut));
    }
    {
      LayerCost l;
      l.layer_id = bp + ".add";
      l.kind = LayerKind::kPointwise;
      l.cin = l.cout = b.spec.out_channels;
      l.hout = l.wout = out_size;
      l.pointwise_per_output = 1;
      layers.push_back(l);
    }
    if (b.head) {
      LayerCost pool;
      pool.layer_id = bp + ".head.pool";
      pool.kind = LayerKind::kPointwise;
      pool.cin = pool.cout = b.spec.in_channels;
      pool.hout = pool.wout = size;
      pool.pointwise_per_output = 1;
      layers.push_back(pool);
      LayerCost fc1;
      fc1.layer_id = bp + ".head.fc1";
      fc1.kind = LayerKind::kLinear;
      fc1.cin = b.spec.in_channels;
      fc1.cout = b.head->hidden_channels();
      fc1.pointwise_per_output = 4;
      layers.push_back(fc1);
      LayerCost fc2;
      fc2.layer_id = bp + ".head.fc2";
      fc2.kind = LayerKind::kLinear;
      fc2.cin = b.head->hidden_channels();
      fc2.cout = 2 * b.head->num_gates();
      fc2.pointwise_per_output = 1;
      layers.push_back(fc2);
    }
    for (const auto& s : b.sites) num_gates += s.count;
    size = out_size;
    channels = b.spec.out_channels;
  }
  {
    LayerCost pool;
    pool.layer_id = "pool";
    pool.kind = LayerKind::kPointwise;
    pool.cin = pool.cout = channels;
    pool.hout = pool.wout = size;
    pool.pointwise_per_output = 1;
    layers.push_back(pool);
    LayerCost fc;
    fc.layer_id = "fc";
    fc.kind = LayerKind::kLinear;
    fc.cin = channels;
    fc.cout = spec_.num_classes;
    fc.pointwise_per_output = 1;
    layers.push_back(fc);
  }
  flops_ = FlopsModel(std::move(layers), num_gates);
  const std::vector<double> weights = flops_.flop_weights();
  gates_.clear();
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    for (const auto& s : blocks_[k].sites) {
      for (std::int64_t g = 0; g < s.count; ++g) {
        GateInfo info;
        info.id = s.first_gate + g;
        info.block = static_cast<int>(k);
        info.site = s.spec.site;
        info.channel = s.per_layer() ? -1 : g;
        info.kind = s.spec.kind;
        info.flop_weight = weights[static_cast<std::size_t>(info.id)];
        gates_.push_back(info);
      }
    }
  }
}

bool GatedNetwork::has_dependent_gates() const {
  for (const auto& g : gates_) {
    if (g.kind == GateKind::kDependent) return true;
  }
  return false;
}

std::vector<double> GatedNetwork::independent_probabilities() const {
  if (has_dependent_gates()) {
    throw ValueError("gate probabilities depend on the input for this model");
  }
  std::vector<double> p(gates_.size());
  for (const auto& b : blocks_) {
    for (const auto& s : b.sites) {
      for (std::int64_t g = 0; g < s.count; ++g) {
        p[static_cast<std::size_t>(s.first_gate + g)] =
            gate_probability(s.logits[2 * g], s.logits[2 * g + 1]);
      }
    }
  }
  return p;
}

std::vector<Parameter*> GatedNetwork::parameter_ptrs() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<ops::BatchNormState*> GatedNetwork::bn_states() {
  std::vector<ops::BatchNormState*> out{&stem_.bn};
  for (auto& b : blocks_) {
    out.push_back(&b.conv1.bn);
    out.push_back(&b.conv2.bn);
    out.push_back(&b.conv3.bn);
    if (b.shortcut) out.push_back(&b.shortcut->bn);
    if (b.head) out.push_back(&b.head->bn);
  }
  return out;
}

std::vector<NamedTensor> GatedNetwork::state_tensors() const {
  std::vector<NamedTensor> out;
  auto add_conv = [&](const std::string& name, const ConvBn& c) {
    out.push_back({name + ".weight", c.weight});
    out.push_back({name + ".bn.gamma", c.gamma});
    out.push_back({name + ".bn.beta", c.beta});
    out.push_back({name + ".bn.running_mean", c.bn.running_mean});
    out.push_back({name + ".bn.running_var", c.bn.running_var});
  };
  add_conv("stem", stem_);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const GatedBlock& b = blocks_[k];
    const std::string bp = "block" + std::to_string(k);
    add_conv(bp + ".conv1", b.conv1);
    add_conv(bp + ".conv2", b.conv2);
    add_conv(bp + ".conv3", b.conv3);
    if (b.shortcut) add_conv(bp + ".shortcut", *b.shortcut);
    for (const auto& s : b.sites) {
      if (s.spec.kind != GateKind::kIndependent) continue;
      for (std::int64_t g = 0; g < s.count; ++g) {
        const std::string gp = "gate." + std::to_string(s.first_gate + g);
        out.push_back({gp + ".w0", Tensor(Shape{1}, s.logits[2 * g])});
        out.push_back({gp + ".w1", Tensor(Shape{1}, s.logits[2 * g + 1])});
      }
    }
    if (b.head) {
      const std::string hp = "gate." + bp + ".head";
      out.push_back({hp + ".fc1.weight", b.head->fc1_weight});
      out.push_back({hp + ".fc1.bias", b.head->fc1_bias});
      out.push_back({hp + ".bn.gamma", b.head->bn_gamma});
      out.push_back({hp + ".bn.beta", b.head->bn_beta});
      out.push_back({hp + ".bn.running_mean", b.head->bn.running_mean});
      out.push_back({hp + ".bn.running_var", b.head->bn.running_var});
      out.push_back({hp + ".fc2.weight", b.head->fc2_weight});
      out.push_back({hp + ".fc2.bias", b.head->fc2_bias});
    }
  }
  out.push_back({"fc.weight", fc_weight_});
  out.push_back({"fc.bias", fc_bias_});
  return out;
}

void GatedNetwork::load_state(const Checkpoint& ck) {
  auto copy = [&](const std::string& name, Tensor& dst) {
    const Tensor& src = ck.at(name);
    if (src.shape() != dst.shape()) {
      throw FormatError("tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", expected " +
                        shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  };
  auto copy_conv = [&](const std::string& name, ConvBn& c) {
    copy(name + ".weight", c.weight);
    copy(name + ".bn.gamma", c.gamma);
    copy(name + ".bn.beta", c.beta);
    copy(name + ".bn.running_mean", c.bn.running_mean);
    copy(name + ".bn.running_var", c.bn.running_var);
  };
  copy_conv("stem", stem_);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    GatedBlock& b = blocks_[k];
    const std::string bp = "block" + std::to_string(k);
    copy_conv(bp + ".conv1", b.conv1);
    copy_conv(bp + ".conv2", b.conv2);
    copy_conv(bp + ".conv3", b.conv3);
    if (b.shortcut) copy_conv(bp + ".shortcut", *b.shortcut);
    for (auto& s : b.sites) {
      if (s.spec.kind != GateKind::kIndependent) continue;
      for (std::int64_t g = 0; g < s.count; ++g) {
        const std::string gp = "gate." + std::to_string(s.first_gate + g);
        Tensor w0(Shape{1}), w1(Shape{1});
        copy(gp + ".w0", w0);
        copy(gp + ".w1", w1);
        s.logits[2 * g] = w0[0];
        s.logits[2 * g + 1] = w1[0];
      }
    }
    if (b.head) {
      const std::string hp = "gate." + bp + ".head";
      copy(hp + ".fc1.weight", b.head->fc1_weight);
      copy(hp + ".fc1.bias", b.head->fc1_bias);
      copy(hp + ".bn.gamma", b.head->bn_gamma);
      copy(hp + ".bn.beta", b.head->bn_beta);
      copy(hp + ".bn.running_mean", b.head->bn.running_mean);
      copy(hp + ".bn.running_var", b.head->bn.running_var);
      copy(hp + ".fc2.weight", b.head->fc2_weight);
      copy(hp + ".fc2.bias", b.head->fc2_bias);
    }
  }
  copy("fc.weight", fc_weight_);
  copy("fc.bias", fc_bias_);
}

GatedNetwork GatedNetwork::clone() const {
  GatedNetwork copy = build(spec_, options_);
  Checkpoint ck;
  for (const auto& nt : state_tensors()) {
    ck.tensors.push_back({nt.name, nt.tensor.clone()});
  }
  copy.load_state(ck);
  return copy;
}

void GatedNetwork::save(const std::filesystem::path& path,
                        const json& extra_meta) const {
  json meta = {{"format", "chgate.gated"},
               {"network", spec_.to_json()},
               {"build", options_.to_json()},
               {"extra", extra_meta}};
  const auto tensors = state_tensors();
  write_checkpoint(path, tensors, meta);
}

GatedNetwork GatedNetwork::load(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  if (!ck.meta.is_object() || ck.meta.value("format", "") != "chgate.gated") {
    throw FormatError(path.string() + " is not a gated network checkpoint");
  }
  NetworkSpec spec;
  BuildOptions opt;
  try {
    spec = NetworkSpec::from_json(ck.meta.at("network"));
    opt = BuildOptions::from_json(ck.meta.at("build"));
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  GatedNetwork net = build(spec, opt);
  net.load_state(ck);
  return net;
}

ForwardResult GatedNetwork::forward(const Tensor& x,
                                    const ForwardOptions& opt) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels ||
      x.dim(2) != spec_.image_size || x.dim(3) != spec_.image_size) {
    throw ShapeError("network expects input [N," +
                     std::to_string(spec_.in_channels) + "," +
                     std::to_string(spec_.image_size) + "," +
                     std::to_string(spec_.image_size) + "], got " +
                     shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t total_gates = num_gates();
  const bool gated = opt.gates != GateMode::kNone;
  if (opt.gates == GateMode::kThreshold && !(opt.tau >= 0.0 && opt.tau <= 1.0)) {
    throw ValueError("threshold tau must lie in [0,1], got " +
                     std::to_string(opt.tau));
  }
  Tensor forced;
  if (gated && opt.gates == GateMode::kForced) {
    if (!opt.forced.defined()) throw ValueError("forced gate values missing");
    if (opt.forced.rank() == 1 && opt.forced.dim(0) == total_gates) {
      forced = Tensor(Shape{n, total_gates});
      for (std::int64_t r = 0; r < n; ++r) {
        std::copy(opt.forced.data().begin(), opt.forced.data().end(),
                  forced.data().begin() + r * total_gates);
      }
    } else if (opt.forced.rank() == 2 && opt.forced.dim(0) == n &&
               opt.forced.dim(1) == total_gates) {
      forced = opt.forced;
    } else {
      throw ShapeError("forced gate values must be [" +
                       std::to_string(total_gates) + "] or [" +
                       std::to_string(n) + "," + std::to_string(total_gates) +
                       "], got " + shape_str(opt.forced.shape()));
    }
  }
  const bool skip = opt.skip_off_channels && gated;
  if (skip) {
    if (opt.train) throw ValueError("channel skipping is an evaluation mode");
    if (opt.gates == GateMode::kSample &&
        opt.sampling.mode != SampleMode::kHard) {
      throw ValueError("channel skipping requires hard gate samples");
    }
    if (forced.defined()) {
      for (float v : forced.data()) {
        if (v != 0.0f && v != 1.0f) {
          throw ValueError("channel skipping requires 0/1 gate values");
        }
      }
    }
  }
  const ops::BnMode bn_mode = opt.train ? ops::BnMode::kTrain : ops::BnMode::kEval;

  ForwardResult result;
  if (total_gates > 0) result.probs = Tensor(Shape{n, total_gates});
  std::vector<Tensor> z_parts;

  Tensor h = conv_bn_relu(x, stem_, opt.train);
  std::int64_t size = spec_.image_size;

  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    GatedBlock& b = blocks_[k];
    const std::int64_t out_size = conv_out_size(size, 3, b.spec.stride, 1);
    // Gate values per site, [N,count].
    std::vector<Tensor> site_z(b.sites.size());
    if (gated && !b.sites.empty()) {
      Tensor head_logits;
      if (b.head) {
        if (opt.gates == GateMode::kSample || opt.gates == GateMode::kThreshold) {
          head_logits = dependent_gate_logits(h, *b.head, bn_mode);
        } else {
          // Probabilities only; nothing is recorded and no statistic moves.
          Tape scratch;
          TapeScope scope(scratch);
          head_logits = dependent_gate_logits(h, *b.head, ops::BnMode::kEval);
          scratch.clear();
        }
      }
      for (std::size_t si = 0; si < b.sites.size(); ++si) {
        SiteGates& s = b.sites[si];
        const bool dependent = s.spec.kind == GateKind::kDependent;
        Tensor logits;
        if (dependent) {
          Tensor cols = ops::slice_cols(head_logits, 2 * s.head_offset,
                                        2 * (s.head_offset + s.count));
          logits = ops::reshape(cols, Shape{n, s.count, 2});
        } else {
          logits = s.logits;
        }
        // Probabilities in double, shared by the threshold rule.
        std::vector<double> p(static_cast<std::size_t>(n * s.count));
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t g = 0; g < s.count; ++g) {
            const std::int64_t li = dependent ? (r * s.count + g) : g;
            const double pv =
                gate_probability(logits[2 * li], logits[2 * li + 1]);
            p[static_cast<std::size_t>(r * s.count + g)] = pv;
            result.probs[r * total_gates + s.first_gate + g] =
                static_cast<float>(pv);
          }
        }
        Tensor z;
        switch (opt.gates) {
          case GateMode::kSample: {
            std::vector<std::int64_t> ids(static_cast<std::size_t>(s.count));
            for (std::int64_t g = 0; g < s.count; ++g) {
              ids[static_cast<std::size_t>(g)] = s.first_gate + g;
            }
            Tensor noise = gate_noise(opt.noise_seed, ids, opt.noise_key, n);
            z = gate_sample_straight_through(logits, noise, opt.sampling);
            break;
          }
          case GateMode::kThreshold:
            z = Tensor(Shape{n, s.count});
            for (std::size_t i = 0; i < p.size(); ++i) {
              z[static_cast<std::int64_t>(i)] = p[i] > opt.tau ? 1.0f : 0.0f;
            }
            break;
          case GateMode::kAllOn:
            z = Tensor(Shape{n, s.count}, 1.0f);
            break;
          case GateMode::kForced:
            z = ops::slice_cols(forced, s.first_gate, s.first_gate + s.count);
            break;
          case GateMode::kNone:
            break;
        }
        site_z[si] = z;
        z_parts.push_back(z);
      }
    }
    auto zs = [&](SiteKind kind) -> const Tensor* {
      const int i = b.site_index[static_cast<int>(kind)];
      if (!gated || i < 0) return nullptr;
      return &site_z[static_cast<std::size_t>(i)];
    };

    if (skip) {
      const SiteGates* s_in = b.site(SiteKind::kInput);
      const SiteGates* s_c1 = b.site(SiteKind::kConv1);
      const SiteGates* s_c2 = b.site(SiteKind::kConv2);
      const SiteGates* s_out = b.site(SiteKind::kOutput);
      const SiteGates* s_sc = b.site(SiteKind::kShortcut);
      const Tensor empty;
      auto zt = [&](SiteKind kind) -> const Tensor& {
        const Tensor* t = zs(kind);
        return t ? *t : empty;
      };
      const auto g1 = kernels::conv_geometry(
          Shape{1, b.spec.in_channels, size, size}, b.conv1.weight.shape(), 1, 0);
      const auto g2 = kernels::conv_geometry(
          Shape{1, b.spec.mid_channels, size, size}, b.conv2.weight.shape(),
          b.spec.stride, 1);
      const auto g3 = kernels::conv_geometry(
          Shape{1, b.spec.mid_channels, out_size, out_size},
          b.conv3.weight.shape(), 1, 0);
      Tensor out(Shape{n, b.spec.out_channels, out_size, out_size});
      std::vector<float> col;
      std::vector<float> t1(static_cast<std::size_t>(g1.out_image()));
      std::vector<float> t2(static_cast<std::size_t>(g2.out_image()));
      std::vector<float> t3(static_cast<std::size_t>(g3.out_image()));
      std::vector<float> ts;
      for (std::int64_t r = 0; r < n; ++r) {
        const float* xin = h.ptr() + r * g1.in_image();
        const auto in_on = on_channels(s_in, zt(SiteKind::kInput), r,
                                       b.spec.in_channels);
        const auto c1_on = on_channels(s_c1, zt(SiteKind::kConv1), r,
                                       b.spec.mid_channels);
        const auto c2_on = on_channels(s_c2, zt(SiteKind::kConv2), r,
                                       b.spec.mid_channels);
        const auto out_on = on_channels(s_out, zt(SiteKind::kOutput), r,
                                        b.spec.out_channels);
        skip_conv_bn_relu(b.conv1, g1, xin, t1.data(), in_on, c1_on, col);
        skip_conv_bn_relu(b.conv2, g2, t1.data(), t2.data(), c1_on, c2_on, col);
        skip_conv_bn_relu(b.conv3, g3, t2.data(), t3.data(), c2_on, out_on, col);
        const float* sc = xin;
        if (b.shortcut) {
          const auto gs = kernels::conv_geometry(
              Shape{1, b.spec.in_channels, size, size},
              b.shortcut->weight.shape(), b.spec.stride, 0);
          ts.assign(static_cast<std::size_t>(gs.out_image()), 0.0f);
          const auto sc_on = on_channels(s_sc, zt(SiteKind::kShortcut), r,
                                         b.spec.out_channels);
          skip_conv_bn_relu(*b.shortcut, gs, xin, ts.data(),
                            kernels::iota_channels(b.spec.in_channels), sc_on,
                            col);
          sc = ts.data();
        }
        float* y = out.ptr() + r * g3.out_image();
        for (std::int64_t i = 0; i < g3.out_image(); ++i) y[i] = t3[i] + sc[i];
      }
      h = out;
    } else {
      auto mask = [&](const Tensor& f, SiteKind kind) {
        const Tensor* z = zs(kind);
        return z ? ops::channel_mask(f, *z) : f;
      };
      const Tensor block_in = h;
      Tensor a = mask(block_in, SiteKind::kInput);
      a = mask(conv_bn_relu(a, b.conv1, opt.train), SiteKind::kConv1);
      a = mask(conv_bn_relu(a, b.conv2, opt.train), SiteKind::kConv2);
      a = mask(conv_bn_relu(a, b.conv3, opt.train), SiteKind::kOutput);
      Tensor sc = block_in;
      if (b.shortcut) {
        sc = mask(conv_bn_relu(block_in, *b.shortcut, opt.train),
                  SiteKind::kShortcut);
      }
      h = ops::add(a, sc);
    }
    size = out_size;
  }
  Tensor pooled = ops::global_avg_pool(h);
  result.logits = ops::linear(pooled, fc_weight_, fc_bias_);
  if (gated && total_gates > 0) {
    result.z = z_parts.size() == 1 ? z_parts[0] : ops::concat_cols(z_parts);
  }
  return result;
}

}  // namespace chgate
