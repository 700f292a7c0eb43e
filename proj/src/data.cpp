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

#include "chgate/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "chgate/error.hpp"
#include "chgate/rng.hpp"

namespace chgate {

namespace {

using nlohmann::json;

std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

// Validates the header and returns the dimensions.
std::vector<std::uint32_t> idx_header(const std::vector<unsigned char>& b,
                                      std::uint32_t magic, std::size_t dims,
                                      const std::string& what) {
  if (b.size() < 4) throw FormatError(what + ": truncated IDX header");
  const std::uint32_t got = be32(b, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x, expected 0x%08x", got,
                  magic);
    throw FormatError(what + ": " + buf);
  }
  if (b.size() < 4 + 4 * dims) throw FormatError(what + ": truncated IDX header");
  std::vector<std::uint32_t> d;
  std::size_t payload = 1;
  for (std::size_t i = 0; i < dims; ++i) {
    d.push_back(be32(b, 4 + 4 * i));
    payload *= d.back();
  }
  if (b.size() < 4 + 4 * dims + payload) {
    throw FormatError(what + ": truncated IDX payload, expected " +
                      std::to_string(payload) + " bytes");
  }
  return d;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("dataset descriptor must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) {
      throw ConfigError("unknown key '" + item.key() + "' in dataset descriptor");
    }
  }
}

}  // namespace

Dataset Dataset::subset(std::span<const std::int64_t> indices) const {
  Dataset d;
  d.num_classes = num_classes;
  d.images = batch(indices);
  for (std::int64_t i : indices) d.labels.push_back(labels[static_cast<std::size_t>(i)]);
  return d;
}

Tensor Dataset::batch(std::span<const std::int64_t> indices) const {
  Shape s = images.shape();
  const std::int64_t per = images.numel() / s[0];
  s[0] = static_cast<std::int64_t>(indices.size());
  Tensor out(s);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(images.ptr() + indices[k] * per, per,
                out.ptr() + static_cast<std::int64_t>(k) * per);
  }
  return out;
}

Split split_train_eval(const Dataset& d) {
  std::vector<std::int64_t> tr, ev;
  for (std::int64_t i = 0; i < d.size(); ++i) (i % 5 == 4 ? ev : tr).push_back(i);
  return {d.subset(tr), d.subset(ev)};
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  const std::int64_t k = spec.num_classes;
  if (k < 2) throw ValueError("synthetic dataset needs at least 2 classes");
  if (spec.samples_per_class < 1 || spec.channels < 1) {
    throw ValueError("synthetic dataset needs positive sizes");
  }
  if (!(spec.noise_sigma >= 0.0)) throw ValueError("noise_sigma must be >= 0");
  const std::int64_t s = spec.image_size;
  const auto grid = static_cast<std::int64_t>(
      std::ceil(std::sqrt(static_cast<double>(k))));
  const std::int64_t side = s / 4;
  const std::int64_t cell = grid > 0 ? s / grid : 0;
  if (side < 1 || side > cell) {
    throw ValueError("image size " + std::to_string(s) + " is too small for " +
                     std::to_string(k) + " class patterns");
  }
  const std::int64_t n = k * spec.samples_per_class;
  Dataset d;
  d.num_classes = k;
  d.images = Tensor(Shape{n, spec.channels, s, s});
  d.labels.resize(static_cast<std::size_t>(n));
  RngStream rng = RngStream::derive(spec.seed, StreamFamily::kDataset);
  const std::int64_t plane = s * s;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % k);
    d.labels[static_cast<std::size_t>(i)] = label;
    const std::int64_t top = (label / grid) * cell + (cell - side) / 2;
    const std::int64_t left = (label % grid) * cell + (cell - side) / 2;
    for (std::int64_t c = 0; c < spec.channels; ++c) {
      float* img = d.images.ptr() + (i * spec.channels + c) * plane;
      for (std::int64_t y = 0; y < s; ++y) {
        for (std::int64_t x = 0; x < s; ++x) {
          const bool inside =
              y >= top && y < top + side && x >= left && x < left + side &&
              (!spec.color_coded || c == label % spec.channels);
          const double base = inside ? spec.amplitude : 0.0;
          img[y * s + x] = static_cast<float>(base + spec.noise_sigma * rng.normal());
        }
      }
    }
  }
  return d;
}

Dataset load_idx_dataset(const std::filesystem::path& images,
                         const std::filesystem::path& labels) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  const auto id = idx_header(ib, 0x00000803u, 3, images.string());
  const auto ld = idx_header(lb, 0x00000801u, 1, labels.string());
  if (id[0] != ld[0]) {
    throw FormatError("IDX image count " + std::to_string(id[0]) +
                      " does not match label count " + std::to_string(ld[0]));
  }
  const std::int64_t n = id[0], h = id[1], w = id[2];
  if (h != w) throw FormatError("IDX images must be square, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  Dataset d;
  d.images = Tensor(Shape{n, 1, h, w});
  for (std::int64_t i = 0; i < n * h * w; ++i) {
    d.images[i] = static_cast<float>(ib[16 + static_cast<std::size_t>(i)]) / 255.0f;
  }
  int max_label = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int l = lb[8 + static_cast<std::size_t>(i)];
    d.labels.push_back(l);
    max_label = std::max(max_label, l);
  }
  d.num_classes = max_label + 1;
  return d;
}

json DatasetDescriptor::to_json() const {
  if (kind == "idx") {
    return {{"kind", "idx"}, {"images", images.string()}, {"labels", labels.string()}};
  }
  return {{"kind", "synthetic"},
          {"num_classes", synthetic.num_classes},
          {"samples_per_class", synthetic.samples_per_class},
          {"image_size", synthetic.image_size},
          {"channels", synthetic.channels},
          {"noise_sigma", synthetic.noise_sigma},
          {"amplitude", synthetic.amplitude},
          {"seed", synthetic.seed},
          {"color_coded", synthetic.color_coded}};
}

DatasetDescriptor DatasetDescriptor::from_json(const json& j) {
  DatasetDescriptor d;
  try {
    d.kind = j.value("kind", "synthetic");
    if (d.kind == "synthetic") {
      check_keys(j, {"kind", "num_classes", "samples_per_class", "image_size",
                     "channels", "noise_sigma", "amplitude", "seed",
                     "color_coded"});
      SyntheticSpec& s = d.synthetic;
      s.num_classes = j.value("num_classes", s.num_classes);
      s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
      s.image_size = j.value("image_size", s.image_size);
      s.channels = j.value("channels", s.channels);
      s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
      s.amplitude = j.value("amplitude", s.amplitude);
      s.seed = j.value("seed", s.seed);
      s.color_coded = j.value("color_coded", s.color_coded);
    } else if (d.kind == "idx") {
      check_keys(j, {"kind", "images", "labels"});
      d.images = j.at("images").get<std::string>();
      d.labels = j.at("labels").get<std::string>();
      for (const auto& p : {d.images, d.labels}) {
        if (!std::filesystem::exists(p)) {
          throw ConfigError("dataset file " + p.string() + " does not exist");
        }
      }
    } else {
      throw ConfigError("unknown dataset kind '" + d.kind + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dataset descriptor: ") + e.what());
  }
  return d;
}

DatasetDescriptor DatasetDescriptor::parse(const std::string& text) {
  if (text == "synthetic") return {};
  if (!text.empty() && text.front() == '{') {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("dataset descriptor is not valid JSON");
    return from_json(j);
  }
  std::ifstream in(text);
  if (!in) throw ConfigError("cannot open dataset descriptor " + text);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(text + " is not valid JSON");
  return from_json(j);
}

Dataset DatasetDescriptor::load() const {
  if (kind == "idx") return load_idx_dataset(images, labels);
  return generate_synthetic_dataset(synthetic);
}

}  // namespace chgate
