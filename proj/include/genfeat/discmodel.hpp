#pragma once

// Discriminative audio encoder: per-frame embedding pooled to the shared token
// rate, a small transformer, and a tagging head used for pretraining. Features
// come from the final-layer tokens.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/checkpoint.hpp"
#include "genfeat/features.hpp"
#include "genfeat/metrics.hpp"
#include "genfeat/nn.hpp"
#include "genfeat/scenes.hpp"
#include "genfeat/tensor.hpp"

namespace gf::disc {

struct EncoderConfig {
  int frames = 256, bins = 64;
  int r = 4;  // temporal pooling; token rate matches the generative features
  int dim = 64, depth = 4, heads = 4;
  int num_classes = scenes::kNumClasses;

  int tokens() const { return frames / r; }

  nlohmann::json to_json() const {
    return {{"frames", frames}, {"bins", bins},   {"r", r},
            {"dim", dim},       {"depth", depth}, {"heads", heads},
            {"num_classes", num_classes}};
  }
  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.frames = j.at("frames");
    c.bins = j.at("bins");
    c.r = j.at("r");
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.num_classes = j.at("num_classes");
    return c;
  }
};

template <class Real>
struct Encoder {
  EncoderConfig cfg;
  Linear<Real> embed;  // per-frame bins -> dim
  std::vector<EncoderBlock<Real>> blocks;
  LayerNorm<Real> ln_f;
  Linear<Real> tag_head;  // dim -> num_classes, on mean-pooled tokens

  Encoder() = default;
  Encoder(const EncoderConfig& c, std::mt19937_64& rng)
      : cfg(c), embed(c.bins, c.dim, rng), ln_f(c.dim), tag_head(c.dim, c.num_classes, rng) {
    if (c.frames % c.r != 0)
      throw Error(ErrorCode::config, "encoder: frames " + std::to_string(c.frames) +
                                         " not divisible by r " + std::to_string(c.r));
    for (int i = 0; i < c.depth; ++i) blocks.emplace_back(c.dim, c.heads, rng);
  }
  void reg(ParamRegistry<Real>& r, bool with_head = true) {
    embed.reg(r, "enc.embed");
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].reg(r, "enc.b" + std::to_string(i));
    ln_f.reg(r, "enc.lnf");
    if (with_head) tag_head.reg(r, "enc.tag");
  }

  Tensor<Real> frame_input(const scenes::Spectrogram& s) const {
    if (s.frames != cfg.frames || s.bins != cfg.bins)
      throw Error(ErrorCode::shape, "encoder: spectrogram " + std::to_string(s.frames) + "x" +
                                        std::to_string(s.bins) + " does not match config " +
                                        std::to_string(cfg.frames) + "x" + std::to_string(cfg.bins));
    auto x = Tensor<Real>::zeros({cfg.frames, cfg.bins});
    for (size_t i = 0; i < s.v.size(); ++i) (*x.data)[i] = Real(s.v[i]);
    return x;
  }

  // [T/r, T] constant matrix averaging each group of r frames
  Tensor<Real> pool_matrix() const {
    auto p = Tensor<Real>::zeros({cfg.tokens(), cfg.frames});
    for (int i = 0; i < cfg.tokens(); ++i)
      for (int k = 0; k < cfg.r; ++k)
        (*p.data)[size_t(i) * cfg.frames + i * cfg.r + k] = Real(1) / Real(cfg.r);
    return p;
  }

  // patch-embedded sequence [T/r, dim]: per-frame embedding, temporal pooling,
  // position table
  Tensor<Real> embed_tokens(Tape<Real>& t, const scenes::Spectrogram& s) const {
    auto h = embed.forward(t, frame_input(s));     // [T, dim]
    h = t.matmul(pool_matrix(), h);                // [T/r, dim]
    return t.add(h, sinusoidal_positions<Real>(cfg.tokens(), cfg.dim));
  }

  Tensor<Real> run_blocks(Tape<Real>& t, Tensor<Real> h) const {
    for (const auto& b : blocks) h = b.forward(t, h);
    return ln_f.forward(t, h);
  }

  // final-layer tokens [T/r, dim]
  Tensor<Real> forward_tokens(Tape<Real>& t, const scenes::Spectrogram& s) const {
    return run_blocks(t, embed_tokens(t, s));
  }

  // [1, num_classes] tagging logits from mean-pooled tokens
  Tensor<Real> tag_logits(Tape<Real>& t, const Tensor<Real>& tokens) const {
    auto ones = Tensor<Real>::full({1, tokens.rows()}, Real(1) / Real(tokens.rows()));
    return tag_head.forward(t, t.matmul(ones, tokens));
  }

  FeatureSeq encode(const scenes::Spectrogram& s) const {
    Tape<Real> t;
    t.recording = false;
    auto tokens = forward_tokens(t, s);
    FeatureSeq fs(tokens.rows(), tokens.cols());
    for (size_t i = 0; i < fs.v.size(); ++i) fs.v[i] = float((*tokens.data)[i]);
    fs.source = "disc.encoder";
    fs.frame_divisor = cfg.r;
    return fs;
  }
};

// Multi-label BCE against a multi-hot target, numerically guarded.
template <class Real>
Tensor<Real> bce_loss(Tape<Real>& t, const Tensor<Real>& logits, const std::vector<int>& target) {
  if (logits.size() != target.size())
    throw Error(ErrorCode::shape, "bce: logits " + shape_str(logits.shape) + " vs " +
                                      std::to_string(target.size()) + " targets");
  auto p = t.sigmoid(logits);
  auto y = Tensor<Real>::zeros(logits.shape);
  auto ny = Tensor<Real>::zeros(logits.shape);
  for (size_t i = 0; i < target.size(); ++i) {
    (*y.data)[i] = Real(target[i]);
    (*ny.data)[i] = Real(1 - target[i]);
  }
  const Real eps = Real(1e-7);
  auto pos = t.mul(y, t.log_(t.add_scalar(p, eps)));
  auto neg = t.mul(ny, t.log_(t.add_scalar(t.scale(p, Real(-1)), Real(1) + eps)));
  return t.scale(t.mean(t.add(pos, neg)), Real(-1));
}

// mAP of a model's clip-level scores on one dataset split
template <class Real>
double tagging_map(const Encoder<Real>& enc, const scenes::Dataset& ds, int split) {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  Tape<Real> tape;
  tape.recording = false;
  for (int idx : ds.indices_of_split(split)) {
    auto logits = enc.tag_logits(tape, enc.forward_tokens(tape, ds.specs[size_t(idx)]));
    std::vector<double> s;
    for (Real v : *logits.data) s.push_back(double(v));
    scores.push_back(s);
    labels.push_back(ds.ann[size_t(idx)].tags);
  }
  return metrics::mean_average_precision(scores, labels).map;
}

struct TagTrainResult {
  std::vector<double> epoch_loss;
  double val_map = 0;
};

template <class Real>
TagTrainResult pretrain_tagging(Encoder<Real>& enc, const scenes::Dataset& ds, int epochs, Real lr,
                                std::uint64_t seed) {
  ParamRegistry<Real> reg;
  enc.reg(reg);
  Adam<Real> opt(AdamConfig<Real>{lr});
  std::mt19937_64 rng(seed);
  auto train_idx = ds.indices_of_split(0);

  TagTrainResult res;
  for (int e = 0; e < epochs; ++e) {
    auto order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (int idx : order) {
      Tape<Real> tape;
      auto logits = enc.tag_logits(tape, enc.forward_tokens(tape, ds.specs[size_t(idx)]));
      auto loss = bce_loss(tape, logits, ds.ann[size_t(idx)].tags);
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw Error(ErrorCode::numeric, "tagging pretrain diverged (seed " + std::to_string(seed) +
                                            ", epoch " + std::to_string(e) + ")");
      sum += lv;
      opt.step(reg, tape.backward(loss));
    }
    res.epoch_loss.push_back(sum / double(order.size()));
  }
  res.val_map = tagging_map(enc, ds, 1);
  return res;
}

// ---- checkpoints ------------------------------------------------------------

inline void save_encoder(const std::string& path, Encoder<float>& enc) {
  ParamRegistry<float> reg;
  enc.reg(reg);
  save_checkpoint(path, reg, {{"kind", "encoder"}, {"encoder", enc.cfg.to_json()}});
}

inline Encoder<float> load_encoder(const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != "encoder")
    throw Error(ErrorCode::config, "not an encoder checkpoint: " + path);
  std::mt19937_64 rng(0);
  Encoder<float> enc(EncoderConfig::from_json(ck.config.at("encoder")), rng);
  ParamRegistry<float> reg;
  enc.reg(reg);
  load_into(ck, reg);
  return enc;
}

}  // namespace gf::disc
