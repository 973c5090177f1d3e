#pragma once

// Latent-diffusion generative stack: a per-latent-frame VAE compresses
// spectrograms into short latent sequences, and a conditional transformer
// denoiser is trained on them with a cosine noise schedule. Features come
// from a single noise/denoise round trip at a small timestep.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/checkpoint.hpp"
#include "genfeat/features.hpp"
#include "genfeat/nn.hpp"
#include "genfeat/scenes.hpp"
#include "genfeat/tensor.hpp"

namespace gf::gen {

// ---- VAE --------------------------------------------------------------------

struct VaeConfig {
  int frames = 256, bins = 64;
  int r = 4;        // temporal downsample: one latent frame per r spectrogram frames
  int d_lat = 8;
  int hidden = 128;
  double beta = 1e-3;  // KL weight

  int tokens() const { return frames / r; }
  int patch() const { return r * bins; }

  nlohmann::json to_json() const {
    return {{"frames", frames}, {"bins", bins},   {"r", r},
            {"d_lat", d_lat},   {"hidden", hidden}, {"beta", beta}};
  }
  static VaeConfig from_json(const nlohmann::json& j) {
    VaeConfig c;
    c.frames = j.at("frames");
    c.bins = j.at("bins");
    c.r = j.at("r");
    c.d_lat = j.at("d_lat");
    c.hidden = j.at("hidden");
    c.beta = j.at("beta");
    return c;
  }
};

// ½·mean(μ² + σ² − logσ² − 1), the per-element Gaussian KL to N(0, I).
template <class Real>
Tensor<Real> kl_divergence(Tape<Real>& t, const Tensor<Real>& mu, const Tensor<Real>& logvar) {
  auto mu2 = t.mul(mu, mu);
  auto var = t.exp_(logvar);
  auto inner = t.add_scalar(t.sub(t.add(mu2, var), logvar), Real(-1));
  return t.scale(t.mean(inner), Real(0.5));
}

template <class Real>
struct Vae {
  VaeConfig cfg;
  Linear<Real> enc1, enc2;  // patch -> hidden -> (mu, logvar)
  Linear<Real> dec1, dec2;  // d_lat -> hidden -> patch
  Real latent_scale = Real(1);  // RMS of training latents; downstream z is mu/scale

  Vae() = default;
  Vae(const VaeConfig& c, std::mt19937_64& rng)
      : cfg(c),
        enc1(c.patch(), c.hidden, rng),
        enc2(c.hidden, 2 * c.d_lat, rng),
        dec1(c.d_lat, c.hidden, rng),
        dec2(c.hidden, c.patch(), rng) {
    if (c.frames % c.r != 0)
      throw Error(ErrorCode::config, "vae: frames " + std::to_string(c.frames) +
                                         " not divisible by r " + std::to_string(c.r));
  }
  void reg(ParamRegistry<Real>& r) {
    enc1.reg(r, "vae.enc1");
    enc2.reg(r, "vae.enc2");
    dec1.reg(r, "vae.dec1");
    dec2.reg(r, "vae.dec2");
  }

  Tensor<Real> patches(const scenes::Spectrogram& s) const {
    if (s.frames != cfg.frames || s.bins != cfg.bins)
      throw Error(ErrorCode::shape, "vae: spectrogram " + std::to_string(s.frames) + "x" +
                                        std::to_string(s.bins) + " does not match config " +
                                        std::to_string(cfg.frames) + "x" + std::to_string(cfg.bins));
    auto x = Tensor<Real>::zeros({cfg.tokens(), cfg.patch()});
    for (size_t i = 0; i < s.v.size(); ++i) (*x.data)[i] = Real(s.v[i]);
    return x;
  }

  // [L, patch] -> mu [L, d_lat], logvar [L, d_lat]
  std::pair<Tensor<Real>, Tensor<Real>> encode_dist(Tape<Real>& t, const Tensor<Real>& x) const {
    auto h = t.gelu(enc1.forward(t, x));
    auto ml = enc2.forward(t, h);
    return {t.slice_cols(ml, 0, cfg.d_lat), t.slice_cols(ml, cfg.d_lat, cfg.d_lat)};
  }

  // raw (unscaled) latent -> [L, patch]
  Tensor<Real> decode_latent(Tape<Real>& t, const Tensor<Real>& z_raw) const {
    return dec2.forward(t, t.gelu(dec1.forward(t, z_raw)));
  }

  // Deterministic eval-mode encode: scaled mu, detached from the parameters.
  Tensor<Real> encode_eval(const scenes::Spectrogram& s) const {
    Tape<Real> t;
    t.recording = false;
    auto [mu, lv] = encode_dist(t, patches(s));
    auto z = Tensor<Real>::zeros(mu.shape);
    for (size_t i = 0; i < mu.size(); ++i) (*z.data)[i] = (*mu.data)[i] / latent_scale;
    return z;
  }

  scenes::Spectrogram decode_eval(const Tensor<Real>& z_scaled) const {
    Tape<Real> t;
    t.recording = false;
    auto z = Tensor<Real>::zeros(z_scaled.shape);
    for (size_t i = 0; i < z.size(); ++i) (*z.data)[i] = (*z_scaled.data)[i] * latent_scale;
    auto x = decode_latent(t, z);
    scenes::Spectrogram s(cfg.frames, cfg.bins);
    for (size_t i = 0; i < s.v.size(); ++i)
      s.v[i] = std::min(1.0f, std::max(0.0f, float((*x.data)[i])));
    return s;
  }
};

struct VaeTrainResult {
  std::vector<double> epoch_loss;
  double final_recon_mse = 0;     // eval-mode reconstruction, training split
  double mean_baseline_mse = 0;   // predicting the per-cell dataset mean
};

template <class Real>
VaeTrainResult train_vae(Vae<Real>& vae, const scenes::Dataset& ds, int epochs, Real lr,
                         std::uint64_t seed) {
  ParamRegistry<Real> reg;
  vae.reg(reg);
  Adam<Real> opt(AdamConfig<Real>{lr});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto train_idx = ds.indices_of_split(0);

  VaeTrainResult res;
  for (int e = 0; e < epochs; ++e) {
    auto order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (int idx : order) {
      Tape<Real> tape;
      auto x = vae.patches(ds.specs[size_t(idx)]);
      auto [mu, logvar] = vae.encode_dist(tape, x);
      auto eps = Tensor<Real>::zeros(mu.shape);
      for (auto& v : *eps.data) v = Real(gauss(rng));
      auto z = tape.add(mu, tape.mul(tape.exp_(tape.scale(logvar, Real(0.5))), eps));
      auto xhat = vae.decode_latent(tape, z);
      auto d = tape.sub(xhat, x);
      auto recon = tape.mean(tape.mul(d, d));
      auto loss = tape.add(recon, tape.scale(kl_divergence(tape, mu, logvar), Real(vae.cfg.beta)));
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw Error(ErrorCode::numeric, "vae training diverged (seed " + std::to_string(seed) +
                                            ", epoch " + std::to_string(e) + ")");
      sum += lv;
      opt.step(reg, tape.backward(loss));
    }
    res.epoch_loss.push_back(sum / double(order.size()));
  }

  // normalize the latent space: downstream diffusion wants unit-RMS latents
  double sq = 0;
  size_t n = 0;
  for (int idx : train_idx) {
    auto z = vae.encode_eval(ds.specs[size_t(idx)]);  // scale is still 1 here
    for (Real v : *z.data) sq += double(v) * double(v);
    n += z.size();
  }
  vae.latent_scale = Real(std::max(1e-6, std::sqrt(sq / double(n))));

  // eval-mode reconstruction vs the mean-predictor baseline
  std::vector<double> cell_mean(size_t(vae.cfg.frames) * size_t(vae.cfg.bins), 0.0);
  for (int idx : train_idx)
    for (size_t i = 0; i < cell_mean.size(); ++i)
      cell_mean[i] += double(ds.specs[size_t(idx)].v[i]) / double(train_idx.size());
  double rec = 0, base = 0;
  for (int idx : train_idx) {
    auto z = vae.encode_eval(ds.specs[size_t(idx)]);
    auto xhat = vae.decode_eval(z);
    for (size_t i = 0; i < cell_mean.size(); ++i) {
      double dr = double(xhat.v[i]) - double(ds.specs[size_t(idx)].v[i]);
      double db = cell_mean[i] - double(ds.specs[size_t(idx)].v[i]);
      rec += dr * dr;
      base += db * db;
    }
  }
  res.final_recon_mse = rec / (double(train_idx.size()) * double(cell_mean.size()));
  res.mean_baseline_mse = base / (double(train_idx.size()) * double(cell_mean.size()));
  return res;
}

// ---- noise schedule ---------------------------------------------------------

struct NoiseSchedule {
  int n_steps = 100;
  std::vector<double> alpha_bar;  // index 0..N, alpha_bar[0] == 1 by normalization

  static NoiseSchedule cosine(int n = 100) {
    NoiseSchedule s;
    s.n_steps = n;
    const double off = 0.008;
    auto f = [&](double t) {
      double x = (t / n + off) / (1.0 + off) * (3.14159265358979323846 / 2.0);
      return std::cos(x) * std::cos(x);
    };
    double f0 = f(0.0);
    for (int t = 0; t <= n; ++t) s.alpha_bar.push_back(f(double(t)) / f0);
    return s;
  }
  double abar(int t) const {
    if (t < 0 || t > n_steps)
      throw Error(ErrorCode::config, "schedule: t " + std::to_string(t) + " outside [0," +
                                         std::to_string(n_steps) + "]");
    return alpha_bar[size_t(t)];
  }
  double alpha(int t) const { return abar(t) / abar(t - 1); }
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <class Real>
Tensor<Real> diffuse(const Tensor<Real>& z0, int t, const Tensor<Real>& eps,
                     const NoiseSchedule& sched) {
  if (t < 1 || t > sched.n_steps)
    throw Error(ErrorCode::config, "diffuse: t " + std::to_string(t) + " outside [1," +
                                       std::to_string(sched.n_steps) + "]");
  if (eps.shape != z0.shape)
    throw Error(ErrorCode::shape, "diffuse: eps " + shape_str(eps.shape) + " vs z0 " +
                                      shape_str(z0.shape));
  double ab = sched.abar(t);
  Real sa = Real(std::sqrt(ab)), sb = Real(std::sqrt(1.0 - ab));
  auto out = Tensor<Real>::zeros(z0.shape);
  for (size_t i = 0; i < z0.size(); ++i)
    (*out.data)[i] = sa * (*z0.data)[i] + sb * (*eps.data)[i];
  return out;
}

// ---- denoiser ---------------------------------------------------------------

struct DenoiserConfig {
  int d_lat = 8;
  int dim = 64, depth = 4, heads = 4;
  int n_steps = 100;
  int num_classes = scenes::kNumClasses;

  nlohmann::json to_json() const {
    return {{"d_lat", d_lat},     {"dim", dim},
            {"depth", depth},     {"heads", heads},
            {"n_steps", n_steps}, {"num_classes", num_classes}};
  }
  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.d_lat = j.at("d_lat");
    c.dim = j.at("dim");
    c.depth = j.at("depth");
    c.heads = j.at("heads");
    c.n_steps = j.at("n_steps");
    c.num_classes = j.at("num_classes");
    return c;
  }
};

// Pre-norm block: bidirectional self-attention, cross-attention to the
// condition token, MLP.
template <class Real>
struct DenoiserBlock {
  LayerNorm<Real> ln1, ln2, ln3;
  MultiHeadAttention<Real> self_attn, cross_attn;
  FeedForward<Real> ff;

  DenoiserBlock() = default;
  DenoiserBlock(int dim, int heads, std::mt19937_64& rng)
      : ln1(dim), ln2(dim), ln3(dim), self_attn(dim, heads, rng), cross_attn(dim, heads, rng),
        ff(dim, dim * 4, rng) {}
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    ln1.reg(r, prefix + ".ln1");
    ln2.reg(r, prefix + ".ln2");
    ln3.reg(r, prefix + ".ln3");
    self_attn.reg(r, prefix + ".self");
    cross_attn.reg(r, prefix + ".cross");
    ff.reg(r, prefix + ".ff");
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x, const Tensor<Real>& cond) const {
    auto h = ln1.forward(t, x);
    auto y = t.add(x, self_attn.forward(t, h, h));
    y = t.add(y, cross_attn.forward(t, ln2.forward(t, y), cond));
    return t.add(y, ff.forward(t, ln3.forward(t, y)));
  }
};

template <class Real>
struct Denoiser {
  DenoiserConfig cfg;
  Linear<Real> in_proj, time_proj, out_proj;
  Tensor<Real> class_table;  // [num_classes + 1, dim]; last row is the NULL condition
  std::vector<DenoiserBlock<Real>> blocks;
  LayerNorm<Real> ln_f;

  Denoiser() = default;
  Denoiser(const DenoiserConfig& c, std::mt19937_64& rng)
      : cfg(c),
        in_proj(c.d_lat, c.dim, rng),
        time_proj(c.dim, c.dim, rng),
        out_proj(c.dim, c.d_lat, rng),
        ln_f(c.dim) {
    class_table = randn<Real>({c.num_classes + 1, c.dim}, rng, Real(0.5));
    for (int i = 0; i < c.depth; ++i) blocks.emplace_back(c.dim, c.heads, rng);
  }
  void reg(ParamRegistry<Real>& r) {
    in_proj.reg(r, "den.in");
    time_proj.reg(r, "den.time");
    out_proj.reg(r, "den.out");
    r.add("den.classes", &class_table);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].reg(r, "den.b" + std::to_string(i));
    ln_f.reg(r, "den.lnf");
  }

  // Condition memory: set-sum of the class embeddings, or the NULL row for an
  // empty set. One token of shape [1, dim].
  Tensor<Real> condition_token(Tape<Real>& t, const std::vector<int>& classes) const {
    std::vector<int> ids(classes);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    for (int c : ids)
      if (c < 0 || c >= cfg.num_classes)
        throw Error(ErrorCode::config, "denoiser: bad condition class " + std::to_string(c));
    if (ids.empty()) ids.push_back(cfg.num_classes);  // NULL
    auto emb = t.embedding(class_table, ids);
    auto ones = Tensor<Real>::full({1, int(ids.size())}, Real(1));
    return t.matmul(ones, emb);
  }

  // eps_hat [L, d_lat]; optionally also the pre-projection hidden states [L, dim].
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& z_t, int step,
                       const std::vector<int>& cond_classes,
                       Tensor<Real>* hidden_out = nullptr) const {
    if (step < 1 || step > cfg.n_steps)
      throw Error(ErrorCode::config, "denoiser: step " + std::to_string(step) + " outside [1," +
                                         std::to_string(cfg.n_steps) + "]");
    if (z_t.ndim() != 2 || z_t.cols() != cfg.d_lat)
      throw Error(ErrorCode::shape, "denoiser: input " + shape_str(z_t.shape) + ", want [L," +
                                        std::to_string(cfg.d_lat) + "]");
    auto cond = condition_token(t, cond_classes);
    auto x = in_proj.forward(t, z_t);
    x = t.add(x, sinusoidal_positions<Real>(z_t.rows(), cfg.dim));
    auto te = sinusoidal_embedding<Real>(double(step), cfg.dim);
    auto temb = time_proj.forward(t, Tensor<Real>::from({1, cfg.dim}, *te.data));
    x = t.add(x, temb);
    for (const auto& b : blocks) x = b.forward(t, x, cond);
    auto h = ln_f.forward(t, x);
    if (hidden_out) *hidden_out = h;
    return out_proj.forward(t, h);
  }
};

struct DenoiserTrainResult {
  std::vector<double> epoch_loss;  // per-element eps MSE
  double final_loss = 0;
};

// Scenes are encoded once by the frozen VAE; each step noises one latent
// sequence at a uniform timestep and regresses the noise. 10% of steps drop
// the class condition to NULL.
template <class Real>
DenoiserTrainResult train_denoiser(Denoiser<Real>& den, const Vae<Real>& vae,
                                   const scenes::Dataset& ds, int epochs, Real lr,
                                   std::uint64_t seed, double cond_dropout = 0.1) {
  ParamRegistry<Real> reg;
  den.reg(reg);
  Adam<Real> opt(AdamConfig<Real>{lr});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> td(1, den.cfg.n_steps);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  auto sched = NoiseSchedule::cosine(den.cfg.n_steps);
  auto train_idx = ds.indices_of_split(0);

  std::vector<Tensor<Real>> latents;
  std::vector<std::vector<int>> classes;
  for (int idx : train_idx) {
    latents.push_back(vae.encode_eval(ds.specs[size_t(idx)]));
    std::vector<int> cls;
    for (const auto& e : ds.ann[size_t(idx)].events) cls.push_back(e.class_id);
    classes.push_back(cls);
  }

  DenoiserTrainResult res;
  for (int e = 0; e < epochs; ++e) {
    std::vector<int> order(train_idx.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (int oi : order) {
      const auto& z0 = latents[size_t(oi)];
      int t = td(rng);
      auto eps = Tensor<Real>::zeros(z0.shape);
      for (auto& v : *eps.data) v = Real(gauss(rng));
      auto z_t = diffuse(z0, t, eps, sched);
      auto cond = ud(rng) < cond_dropout ? std::vector<int>{} : classes[size_t(oi)];
      Tape<Real> tape;
      auto eps_hat = den.forward(tape, z_t, t, cond);
      auto d = tape.sub(eps_hat, eps);
      auto loss = tape.mean(tape.mul(d, d));
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw Error(ErrorCode::numeric, "denoiser training diverged (seed " +
                                            std::to_string(seed) + ", epoch " + std::to_string(e) +
                                            ", t " + std::to_string(t) + ")");
      sum += lv;
      opt.step(reg, tape.backward(loss));
    }
    res.epoch_loss.push_back(sum / double(order.size()));
  }
  res.final_loss = res.epoch_loss.empty() ? 0 : res.epoch_loss.back();
  return res;
}

// ---- feature extraction -----------------------------------------------------

enum class FeatureSource { denoised_latent, final_hidden };

inline std::string feature_source_name(FeatureSource s) {
  return s == FeatureSource::denoised_latent ? "denoised_latent" : "final_hidden";
}
inline FeatureSource feature_source_from(const std::string& s) {
  if (s == "denoised_latent") return FeatureSource::denoised_latent;
  if (s == "final_hidden") return FeatureSource::final_hidden;
  throw Error(ErrorCode::config, "unknown feature source: " + s);
}

struct GenFeatureConfig {
  int t_star = 10;
  FeatureSource source = FeatureSource::denoised_latent;
  std::uint64_t seed = 0;  // extraction noise seed; fixed seed -> identical features
};

// One noising step to t_star and one denoiser pass under the NULL condition;
// emits either the implied clean-latent estimate or the final hidden states.
// Pure read: neither model is mutated.
template <class Real>
FeatureSeq extract_generative_features(const Vae<Real>& vae, const Denoiser<Real>& den,
                                       const scenes::Spectrogram& spec,
                                       const GenFeatureConfig& fc) {
  if (fc.t_star < 1 || fc.t_star > den.cfg.n_steps)
    throw Error(ErrorCode::config, "t_star " + std::to_string(fc.t_star) + " outside [1," +
                                       std::to_string(den.cfg.n_steps) + "]");
  auto sched = NoiseSchedule::cosine(den.cfg.n_steps);
  auto z0 = vae.encode_eval(spec);
  std::mt19937_64 rng(fc.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto eps = Tensor<Real>::zeros(z0.shape);
  for (auto& v : *eps.data) v = Real(gauss(rng));
  auto z_t = diffuse(z0, fc.t_star, eps, sched);
  Tape<Real> tape;
  tape.recording = false;
  Tensor<Real> hidden;
  auto eps_hat = den.forward(tape, z_t, fc.t_star, {}, &hidden);

  const Tensor<Real>* out = &hidden;
  Tensor<Real> zhat;
  if (fc.source == FeatureSource::denoised_latent) {
    double ab = sched.abar(fc.t_star);
    Real sa = Real(std::sqrt(ab)), sb = Real(std::sqrt(1.0 - ab));
    zhat = Tensor<Real>::zeros(z0.shape);
    for (size_t i = 0; i < zhat.size(); ++i)
      (*zhat.data)[i] = ((*z_t.data)[i] - sb * (*eps_hat.data)[i]) / sa;
    out = &zhat;
  }
  FeatureSeq fs(out->rows(), out->cols());
  for (size_t i = 0; i < fs.v.size(); ++i) fs.v[i] = float((*out->data)[i]);
  fs.source = "gen." + feature_source_name(fc.source);
  fs.frame_divisor = vae.cfg.r;
  return fs;
}

// ---- sampling ---------------------------------------------------------------

// Ancestral sampling for `steps` timesteps (full chain when steps == n_steps);
// steps == 0 decodes a pure-noise latent as a baseline.
template <class Real>
scenes::Spectrogram generate(const Vae<Real>& vae, const Denoiser<Real>& den,
                             const std::vector<int>& condition, int steps, std::uint64_t seed) {
  if (steps < 0 || steps > den.cfg.n_steps)
    throw Error(ErrorCode::config, "generate: steps " + std::to_string(steps) + " outside [0," +
                                       std::to_string(den.cfg.n_steps) + "]");
  auto sched = NoiseSchedule::cosine(den.cfg.n_steps);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto z = Tensor<Real>::zeros({vae.cfg.tokens(), den.cfg.d_lat});
  for (auto& v : *z.data) v = Real(gauss(rng));

  Tape<Real> tape;
  tape.recording = false;
  for (int t = steps; t >= 1; --t) {
    auto eps_hat = den.forward(tape, z, t, condition);
    double ab = sched.abar(t), ab_prev = sched.abar(t - 1);
    double alpha = sched.alpha(t);
    double beta = 1.0 - alpha;
    double sigma = t > 1 ? std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
      // posterior mean through a clamped clean-latent estimate; keeps the
      // small model from drifting off the latent manifold
      double z0_hat = (double((*z.data)[i]) -
                       std::sqrt(1.0 - ab) * double((*eps_hat.data)[i])) /
                      std::sqrt(ab);
      z0_hat = std::min(3.0, std::max(-3.0, z0_hat));
      double mean = (std::sqrt(ab_prev) * beta * z0_hat +
                     std::sqrt(alpha) * (1.0 - ab_prev) * double((*z.data)[i])) /
                    (1.0 - ab);
      (*z.data)[i] = Real(mean + sigma * gauss(rng));
    }
  }
  return vae.decode_eval(z);
}

// ---- checkpoints ------------------------------------------------------------

inline void save_vae(const std::string& path, Vae<float>& vae) {
  ParamRegistry<float> reg;
  vae.reg(reg);
  std::map<std::string, TensorF> m;
  for (const auto& [name, t] : reg.params) m[name] = *t;
  m["vae.latent_scale"] = TensorF::scalar(vae.latent_scale);
  save_checkpoint(path, m, {{"kind", "vae"}, {"vae", vae.cfg.to_json()}});
}

inline Vae<float> load_vae(const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != "vae")
    throw Error(ErrorCode::config, "not a vae checkpoint: " + path);
  std::mt19937_64 rng(0);
  Vae<float> vae(VaeConfig::from_json(ck.config.at("vae")), rng);
  ParamRegistry<float> reg;
  vae.reg(reg);
  load_into(ck, reg);
  vae.latent_scale = ck.get("vae.latent_scale").item();
  return vae;
}

inline void save_denoiser(const std::string& path, Denoiser<float>& den) {
  ParamRegistry<float> reg;
  den.reg(reg);
  save_checkpoint(path, reg, {{"kind", "denoiser"}, {"denoiser", den.cfg.to_json()}});
}

inline Denoiser<float> load_denoiser(const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != "denoiser")
    throw Error(ErrorCode::config, "not a denoiser checkpoint: " + path);
  std::mt19937_64 rng(0);
  Denoiser<float> den(DenoiserConfig::from_json(ck.config.at("denoiser")), rng);
  ParamRegistry<float> reg;
  den.reg(reg);
  load_into(ck, reg);
  return den;
}

}  // namespace gf::gen
