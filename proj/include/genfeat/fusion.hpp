#pragma once

// Combining the generative and discriminative feature streams: bypass the
// encoder entirely (replace) or inject a gated cross-attention block before
// (early) or after (mid) the encoder stack. The gate starts at zero so the
// early and mid variants are bit-identical to the unfused encoder until
// fine-tuning moves the gate.

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/discmodel.hpp"
#include "genfeat/features.hpp"
#include "genfeat/nn.hpp"
#include "genfeat/scenes.hpp"
#include "genfeat/tensor.hpp"

namespace gf::fusion {

enum class Strategy { none, replace, early, mid };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::replace: return "replace";
    case Strategy::early: return "early";
    case Strategy::mid: return "mid";
  }
  return "?";
}

inline Strategy strategy_from(const std::string& s) {
  if (s == "none") return Strategy::none;
  if (s == "replace") return Strategy::replace;
  if (s == "early") return Strategy::early;
  if (s == "mid") return Strategy::mid;
  throw Error(ErrorCode::config, "unknown fusion strategy: " + s);
}

// Which point of the encoder pipeline a fuse call is servicing.
enum class Stage { pre_encoder, post_encoder };

inline std::string stage_name(Stage s) {
  return s == Stage::pre_encoder ? "pre_encoder" : "post_encoder";
}

struct FusionConfig {
  Strategy strategy = Strategy::none;
  int dim = 64, heads = 4;
  int d_gen = 8;             // generative feature width, projected to dim
  bool gen_queries = false;  // ablation: swap attention direction

  nlohmann::json to_json() const {
    return {{"strategy", strategy_name(strategy)},
            {"dim", dim},
            {"heads", heads},
            {"d_gen", d_gen},
            {"gen_queries", gen_queries}};
  }
  static FusionConfig from_json(const nlohmann::json& j) {
    FusionConfig c;
    c.strategy = strategy_from(j.at("strategy"));
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.d_gen = j.at("d_gen");
    c.gen_queries = j.at("gen_queries");
    return c;
  }

  // The stage at which this strategy injects; none/replace act at the
  // encoder-output site.
  Stage stage() const { return strategy == Strategy::early ? Stage::pre_encoder : Stage::post_encoder; }
};

// One pre-norm cross-attention block with a learnable scalar gate:
//   h + tanh(g) * CrossAttn(ln(h) -> ln(proj(gen)))
// Queries come from the discriminative tokens by default; the generative
// stream is consumed as a fixed input (the extractor is not fine-tuned here).
template <class Real>
struct FusionModule {
  FusionConfig cfg;
  Linear<Real> proj;  // d_gen -> dim
  LayerNorm<Real> ln_q, ln_kv;
  MultiHeadAttention<Real> attn;
  Tensor<Real> gate;  // scalar, init exactly 0

  FusionModule() = default;
  FusionModule(const FusionConfig& c, std::mt19937_64& rng)
      : cfg(c), proj(c.d_gen, c.dim, rng), ln_q(c.dim), ln_kv(c.dim), attn(c.dim, c.heads, rng),
        gate(Tensor<Real>::zeros({1, 1})) {}

  // Parameters actually trainable under the configured strategy. none uses no
  // fusion parameters; replace only the input projection.
  void reg(ParamRegistry<Real>& r, const std::string& prefix = "fus") {
    if (cfg.strategy == Strategy::none) return;
    proj.reg(r, prefix + ".proj");
    if (cfg.strategy == Strategy::replace) return;
    ln_q.reg(r, prefix + ".lnq");
    ln_kv.reg(r, prefix + ".lnkv");
    attn.reg(r, prefix + ".attn");
    r.add(prefix + ".gate", &gate);
  }

  Tensor<Real> project(Tape<Real>& t, const Tensor<Real>& gen) const {
    if (gen.cols() != cfg.d_gen)
      throw Error(ErrorCode::shape, "fusion: generative stream width " +
                                        std::to_string(gen.cols()) + " does not match d_gen " +
                                        std::to_string(cfg.d_gen));
    return proj.forward(t, gen);
  }

  // Gated residual cross-attention; output shape equals h's.
  Tensor<Real> apply(Tape<Real>& t, const Tensor<Real>& h, const Tensor<Real>& gen) const {
    if (h.cols() != cfg.dim)
      throw Error(ErrorCode::shape, "fusion: host stream width " + std::to_string(h.cols()) +
                                        " does not match dim " + std::to_string(cfg.dim));
    auto z = ln_kv.forward(t, project(t, gen));
    auto q = ln_q.forward(t, h);
    auto ca = cfg.gen_queries ? attn.forward(t, z, q) : attn.forward(t, q, z);
    auto g_row = t.matmul(t.tanh_(gate), Tensor<Real>::full({1, cfg.dim}, Real(1)));
    return t.add(h, t.mul(ca, g_row));
  }
};

template <class Real>
Tensor<Real> feature_tensor(const FeatureSeq& fs) {
  auto x = Tensor<Real>::zeros({fs.tokens, fs.dim});
  for (size_t i = 0; i < fs.v.size(); ++i) (*x.data)[i] = Real(fs.v[i]);
  return x;
}

struct FusedFeatures {
  FeatureSeq tokens;
  nlohmann::json provenance;  // strategy, stage, input sources
};

// Feature-level fusion of two already-extracted streams. Stage must match the
// strategy's injection site; strategy none passes the discriminative stream
// through untouched.
template <class Real>
FusedFeatures fuse(const FusionModule<Real>& m, const FeatureSeq& disc_stream,
                   const FeatureSeq& gen_stream, Stage stage) {
  const auto& cfg = m.cfg;
  if (cfg.strategy != Strategy::none && stage != cfg.stage())
    throw Error(ErrorCode::config, "fusion: strategy " + strategy_name(cfg.strategy) +
                                       " invoked at stage " + stage_name(stage));
  FusedFeatures out;
  out.provenance = {{"strategy", strategy_name(cfg.strategy)},
                    {"stage", stage_name(stage)},
                    {"disc_source", disc_stream.source},
                    {"gen_source", gen_stream.source}};
  Tape<Real> t;
  t.recording = false;
  Tensor<Real> y;
  if (cfg.strategy == Strategy::none) {
    out.tokens = disc_stream;
    return out;
  } else if (cfg.strategy == Strategy::replace) {
    y = m.project(t, feature_tensor<Real>(gen_stream));
    out.tokens.frame_divisor = gen_stream.frame_divisor;
  } else {
    if (disc_stream.tokens != gen_stream.tokens)
      throw Error(ErrorCode::shape, "fusion: token counts differ, " +
                                        std::to_string(disc_stream.tokens) + " vs " +
                                        std::to_string(gen_stream.tokens));
    y = m.apply(t, feature_tensor<Real>(disc_stream), feature_tensor<Real>(gen_stream));
    out.tokens.frame_divisor = disc_stream.frame_divisor;
  }
  out.tokens.tokens = y.rows();
  out.tokens.dim = y.cols();
  out.tokens.v.resize(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    float v = float((*y.data)[i]);
    if (!std::isfinite(v)) throw Error(ErrorCode::numeric, "fusion produced non-finite values");
    out.tokens.v[i] = v;
  }
  out.tokens.source = "fused." + strategy_name(cfg.strategy);
  return out;
}

// Encoder plus fusion site wiring; the end-to-end backbone downstream heads
// consume. The generative stream enters as a precomputed constant.
template <class Real>
struct FusedEncoder {
  disc::Encoder<Real> enc;
  FusionModule<Real> fus;

  FusedEncoder() = default;
  FusedEncoder(disc::Encoder<Real> e, const FusionConfig& fc, std::mt19937_64& rng)
      : enc(std::move(e)), fus(fc, rng) {
    if (fc.strategy != Strategy::none && fc.dim != enc.cfg.dim)
      throw Error(ErrorCode::config, "fusion dim " + std::to_string(fc.dim) +
                                         " does not match encoder dim " +
                                         std::to_string(enc.cfg.dim));
  }

  const FusionConfig& config() const { return fus.cfg; }

  // Registers only what the strategy trains: replace bypasses the encoder, so
  // its weights stay out of the registry.
  void reg(ParamRegistry<Real>& r, bool with_tag_head = false) {
    if (fus.cfg.strategy != Strategy::replace) enc.reg(r, with_tag_head);
    fus.reg(r);
  }

  Tensor<Real> forward_tokens(Tape<Real>& t, const scenes::Spectrogram& s,
                              const Tensor<Real>& gen) const {
    switch (fus.cfg.strategy) {
      case Strategy::none:
        return enc.forward_tokens(t, s);
      case Strategy::replace:
        return fus.project(t, gen);
      case Strategy::early:
        return enc.run_blocks(t, fus.apply(t, enc.embed_tokens(t, s), gen));
      case Strategy::mid:
        return fus.apply(t, enc.forward_tokens(t, s), gen);
    }
    throw Error(ErrorCode::config, "fusion: bad strategy");
  }

  Tensor<Real> forward_tokens(Tape<Real>& t, const scenes::Spectrogram& s,
                              const FeatureSeq& gen) const {
    return forward_tokens(t, s, feature_tensor<Real>(gen));
  }
};

// Exact trainable-parameter count for the assembled backbone under its
// configured strategy.
template <class Real>
long count_trainable_params(FusedEncoder<Real>& model, bool with_tag_head = false) {
  ParamRegistry<Real> r;
  model.reg(r, with_tag_head);
  return r.count();
}

}  // namespace gf::fusion
