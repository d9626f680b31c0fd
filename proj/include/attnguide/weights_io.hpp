#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "attnguide/vit.hpp"

namespace attnguide {

static_assert(std::endian::native == std::endian::little, "weight container I/O assumes a little-endian host");

template <std::floating_point Real>
struct LoadedWeights {
  ModelWeights<Real> weights;
  nlohmann::json metadata;  // the full __metadata__ object
  std::vector<std::string> warnings;
};

/// Serialises weights: u64 header length, JSON header, raw float32 payload.
template <std::floating_point Real>
std::string save_weights_bytes(const ModelWeights<Real>& w, const nlohmann::json& extra_meta = nlohmann::json::object()) {
  w.validate();
  nlohmann::json header = nlohmann::json::object();
  nlohmann::json meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  meta["config"] = w.config;
  std::string payload;
  w.visit([&](const std::string& name, const Tensor<Real>& t) {
    header[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"offset", payload.size()}};
    for (Real v : t.data()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      payload.append(b, 4);
    }
  });
  meta["payload_bytes"] = payload.size();
  header["__metadata__"] = meta;
  const std::string h = header.dump();
  std::string out(8, '\0');
  const std::uint64_t n = h.size();
  std::memcpy(out.data(), &n, 8);
  return out + h + payload;
}

template <std::floating_point Real>
void save_weights(const std::string& path, const ModelWeights<Real>& w,
                  const nlohmann::json& extra_meta = nlohmann::json::object()) {
  const std::string bytes = save_weights_bytes(w, extra_meta);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

template <std::floating_point Real>
LoadedWeights<Real> load_weights_bytes(const std::string& bytes) {
  using K = FormatError::Kind;
  if (bytes.size() < 8) throw FormatError(K::truncated, "weight file shorter than its 8-byte length prefix");
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, bytes.data(), 8);
  if (hlen > bytes.size() - 8) throw FormatError(K::truncated, "header length " + std::to_string(hlen) + " exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::bad_header, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("__metadata__") || !header["__metadata__"].contains("config"))
    throw FormatError(K::bad_header, "header lacks __metadata__.config");

  LoadedWeights<Real> out;
  out.metadata = header["__metadata__"];
  ModelConfig cfg;
  std::uint64_t declared = 0;
  try {
    cfg = out.metadata["config"].template get<ModelConfig>();
    declared = out.metadata.at("payload_bytes").template get<std::uint64_t>();
    cfg.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(K::bad_header, std::string("bad __metadata__: ") + e.what());
  } catch (const PreconditionError& e) {
    throw FormatError(K::bad_header, e.what());
  }
  const std::string_view payload(bytes.data() + 8 + hlen, bytes.size() - 8 - hlen);
  if (payload.size() < declared)
    throw FormatError(K::truncated, "payload has " + std::to_string(payload.size()) + " bytes, header declares " +
                                        std::to_string(declared));

  out.weights = ModelWeights<Real>::zeros(cfg);
  std::map<std::string, bool> used;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  out.weights.visit([&](const std::string& name, Tensor<Real>& t) {
    if (!header.contains(name)) throw FormatError(K::missing_tensor, "missing tensor " + name);
    const auto& e = header[name];
    used[name] = true;
    if (e.value("dtype", "") != "F32") throw FormatError(K::bad_dtype, name + ": dtype must be F32");
    Shape shape;
    std::uint64_t off = 0;
    try {
      shape = e.at("shape").get<Shape>();
      off = e.at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(K::bad_header, name + ": " + ex.what());
    }
    const Shape want = t.shape();
    if (shape != want)
      throw FormatError(K::shape_mismatch, name + ": header shape " + shape_str(shape) + ", config expects " + shape_str(want));
    const std::uint64_t len = shape_size(shape) * 4;
    if (off % 4 || off > declared || len > declared - off)
      throw FormatError(K::bad_offset, name + ": offset " + std::to_string(off) + " (+" + std::to_string(len) +
                                           " bytes) outside the " + std::to_string(declared) + "-byte payload");
    for (auto [b, l] : spans)
      if (off < b + l && b < off + len) throw FormatError(K::bad_offset, name + ": byte range overlaps another tensor");
    spans.emplace_back(off, len);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, payload.data() + off + 4 * i, 4);
      t[i] = Real(f);
    }
  });
  for (const auto& [name, _] : header.items())
    if (name != "__metadata__" && !used.count(name)) out.warnings.push_back("ignoring unknown tensor " + name);
  out.weights.validate();
  return out;
}

template <std::floating_point Real>
LoadedWeights<Real> load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weights: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_weights_bytes<Real>(bytes);
}

}  // namespace attnguide
