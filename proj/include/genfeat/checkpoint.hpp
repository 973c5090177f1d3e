#pragma once

// Named-tensor checkpoint container, shared repo-wide.
// File layout: [u64 LE manifest length][JSON manifest][raw little-endian payload].
// The manifest records names, shapes, dtype and byte offsets, plus a free-form
// config object used as a fingerprint against silent config drift.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/nn.hpp"
#include "genfeat/tensor.hpp"

namespace gf {

struct Checkpoint {
  std::map<std::string, TensorF> tensors;
  nlohmann::json config;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  const TensorF& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw Error(ErrorCode::io, "checkpoint: missing tensor '" + name + "'");
    return it->second;
  }
};

namespace detail {
inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::map<std::string, TensorF>& tensors,
                            const nlohmann::json& config) {
  nlohmann::json manifest;
  manifest["format"] = "genfeat-ckpt-v1";
  manifest["config"] = config;
  auto& list = manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    e["nbytes"] = t.size() * sizeof(float);
    list.push_back(e);
    offset += t.size() * sizeof(float);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "cannot open for write: " + path);
  std::string m = manifest.dump();
  detail::write_u64_le(os, m.size());
  os.write(m.data(), std::streamsize(m.size()));
  for (const auto& [name, t] : tensors) {
    static_assert(sizeof(float) == 4);
    // Assumes a little-endian host, as does the rest of the binary I/O.
    os.write(reinterpret_cast<const char*>(t.data->data()),
             std::streamsize(t.size() * sizeof(float)));
  }
  if (!os) throw Error(ErrorCode::io, "write failed: " + path);
}

inline void save_checkpoint(const std::string& path, const ParamRegistry<float>& reg,
                            const nlohmann::json& config) {
  std::map<std::string, TensorF> m;
  for (const auto& [name, t] : reg.params) m[name] = *t;
  save_checkpoint(path, m, config);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::missing_dependency, "checkpoint not found: " + path);
  std::uint64_t mlen = detail::read_u64_le(is);
  if (!is || mlen > (1u << 26)) throw Error(ErrorCode::io, "corrupt checkpoint header: " + path);
  std::string m(mlen, '\0');
  is.read(m.data(), std::streamsize(mlen));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, "corrupt checkpoint manifest: " + path + ": " + e.what());
  }
  Checkpoint ck;
  ck.config = manifest.value("config", nlohmann::json::object());
  std::vector<char> payload((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name");
    std::vector<int> shape = e.at("shape").get<std::vector<int>>();
    std::uint64_t off = e.at("offset"), nbytes = e.at("nbytes");
    if (e.at("dtype") != "f32")
      throw Error(ErrorCode::io, "unsupported dtype in checkpoint: " + path);
    if (off + nbytes > payload.size())
      throw Error(ErrorCode::io, "checkpoint payload truncated: " + path + " tensor " + name);
    auto t = TensorF::zeros(shape);
    if (t.size() * sizeof(float) != nbytes)
      throw Error(ErrorCode::io, "checkpoint shape/payload mismatch for tensor " + name);
    std::memcpy(t.data->data(), payload.data() + off, nbytes);
    ck.tensors[name] = t;
  }
  return ck;
}

// Copies checkpoint tensors into an assembled model's registry, by name.
inline void load_into(const Checkpoint& ck, ParamRegistry<float>& reg) {
  for (auto& [name, p] : reg.params) {
    const auto& src = ck.get(name);
    if (src.shape != p->shape)
      throw Error(ErrorCode::io, "checkpoint tensor '" + name + "' has shape " +
                                     shape_str(src.shape) + ", model expects " +
                                     shape_str(p->shape));
    *p->data = *src.data;
  }
}

}  // namespace gf
