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

#include "chgate/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "chgate/error.hpp"

namespace chgate {

namespace {

void put_le32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (int b = 0; b < 4; ++b) {
    out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
}

float get_le32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[b]} << (8 * b);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_checkpoint(const std::filesystem::path& path,
                      std::span<const NamedTensor> tensors,
                      const nlohmann::json& meta) {
  nlohmann::json manifest = nlohmann::json::array();
  std::set<std::string> seen;
  std::int64_t offset = 0;
  std::string blob;
  for (const auto& nt : tensors) {
    if (!seen.insert(nt.name).second) {
      throw ValueError("duplicate checkpoint tensor name " + nt.name);
    }
    const std::int64_t len = nt.tensor.numel();
    manifest.push_back({{"name", nt.name},
                        {"shape", nt.tensor.shape()},
                        {"offset", offset},
                        {"len", len}});
    for (float v : nt.tensor.data()) put_le32(blob, v);
    offset += len;
  }
  nlohmann::json header = {{"meta", meta}, {"tensors", manifest}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("checkpoint " + path.string() + " has no header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint header is not valid JSON: " +
                      std::string(e.what()));
  }
  if (!header.is_object() || !header.contains("tensors") ||
      !header["tensors"].is_array()) {
    throw FormatError("checkpoint header lacks a tensors array");
  }
  const std::string blob((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const auto total = static_cast<std::int64_t>(blob.size() / 4);
  if (blob.size() % 4 != 0) {
    throw FormatError("checkpoint payload is not a whole number of floats");
  }

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  std::set<std::string> names;
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  for (const auto& entry : header["tensors"]) {
    std::string name;
    Shape shape;
    std::int64_t offset = 0;
    std::int64_t len = 0;
    try {
      name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::int64_t>();
      len = entry.at("len").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad checkpoint manifest entry: " +
                        std::string(e.what()));
    }
    if (!names.insert(name).second) {
      throw FormatError("duplicate checkpoint tensor " + name);
    }
    std::int64_t numel = 0;
    try {
      numel = shape_numel(shape);
    } catch (const Error&) {
      throw FormatError("tensor " + name + " has invalid shape " +
                        shape_str(shape));
    }
    if (numel != len) {
      throw FormatError("tensor " + name + " shape " + shape_str(shape) +
                        " does not match len " + std::to_string(len));
    }
    if (offset < 0 || offset + len > total) {
      throw FormatError("tensor " + name + " lies outside the payload");
    }
    for (const auto& [b, e] : ranges) {
      if (offset < e && b < offset + len) {
        throw FormatError("tensor " + name + " overlaps another tensor");
      }
    }
    ranges.emplace_back(offset, offset + len);
    Tensor t(shape);
    for (std::int64_t i = 0; i < len; ++i) {
      t[i] = get_le32(bytes + 4 * (offset + i));
    }
    ck.tensors.push_back({name, t});
  }
  return ck;
}

}  // namespace chgate
