#pragma once

// Token-rate feature sequences shared by both feature extractors, with a raw
// binary payload plus a JSON sidecar describing rate and provenance.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/tensor.hpp"

namespace gf {

struct FeatureSeq {
  int tokens = 0, dim = 0;
  std::vector<float> v;
  std::string source;      // which extractor produced this
  int frame_divisor = 1;   // spectrogram frames per feature token

  FeatureSeq() = default;
  FeatureSeq(int t, int d) : tokens(t), dim(d), v(size_t(t) * size_t(d), 0.0f) {}
  float& at(int t, int d) { return v[size_t(t) * dim + d]; }
  float at(int t, int d) const { return v[size_t(t) * dim + d]; }
};

// Writes <base>.bin (raw little-endian f32) and <base>.json.
inline void save_feature_seq(const FeatureSeq& fs, const std::string& base) {
  std::ofstream os(base + ".bin", std::ios::binary);
  os.write(reinterpret_cast<const char*>(fs.v.data()), std::streamsize(fs.v.size() * sizeof(float)));
  if (!os) throw Error(ErrorCode::io, "failed writing " + base + ".bin");
  nlohmann::json j = {{"tokens", fs.tokens},
                      {"dim", fs.dim},
                      {"source", fs.source},
                      {"frame_divisor", fs.frame_divisor}};
  std::ofstream js(base + ".json");
  js << j.dump(1);
  if (!js) throw Error(ErrorCode::io, "failed writing " + base + ".json");
}

inline FeatureSeq load_feature_seq(const std::string& base) {
  std::ifstream js(base + ".json");
  if (!js) throw Error(ErrorCode::missing_dependency, "feature sidecar not found: " + base + ".json");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, std::string("corrupt feature sidecar: ") + e.what());
  }
  FeatureSeq fs(j.at("tokens"), j.at("dim"));
  fs.source = j.at("source");
  fs.frame_divisor = j.at("frame_divisor");
  std::ifstream is(base + ".bin", std::ios::binary);
  if (!is) throw Error(ErrorCode::missing_dependency, "feature payload not found: " + base + ".bin");
  is.read(reinterpret_cast<char*>(fs.v.data()), std::streamsize(fs.v.size() * sizeof(float)));
  if (size_t(is.gcount()) != fs.v.size() * sizeof(float) || is.peek() != EOF)
    throw Error(ErrorCode::io, "feature payload " + base + ".bin has wrong length");
  return fs;
}

}  // namespace gf
