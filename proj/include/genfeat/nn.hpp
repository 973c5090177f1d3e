#pragma once

// Layers and optimizers on top of the tape engine. Everything here is shared
// by the generative and discriminative model stacks.

#include <map>
#include <random>
#include <string>

#include "genfeat/tensor.hpp"

namespace gf {

template <class Real>
struct ParamRegistry {
  std::map<std::string, Tensor<Real>*> params;

  void add(const std::string& name, Tensor<Real>* t) {
    if (params.count(name)) throw Error(ErrorCode::config, "duplicate parameter name: " + name);
    t->requires_grad = true;
    params[name] = t;
  }

  long count() const {
    long n = 0;
    for (const auto& [name, t] : params) n += long(t->size());
    return n;
  }
};

template <class Real>
Tensor<Real> randn(std::vector<int> shape, std::mt19937_64& rng, Real sd) {
  auto t = Tensor<Real>::zeros(std::move(shape));
  std::normal_distribution<double> d(0.0, double(sd));
  for (auto& v : *t.data) v = Real(d(rng));
  return t;
}

// ---- optimizer --------------------------------------------------------------

template <class Real>
struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real weight_decay = Real(0);
  bool decoupled = false;  // AdamW: subtract lr*wd*param before the Adam step
};

template <class Real>
class Adam {
 public:
  explicit Adam(AdamConfig<Real> cfg = {}) : cfg_(cfg) {}

  void step(ParamRegistry<Real>& reg, const Gradients<Real>& grads, Real lr_override = Real(-1)) {
    Real lr = lr_override >= 0 ? lr_override : cfg_.lr;
    ++t_;
    Real bc1 = Real(1) - std::pow(double(cfg_.beta1), double(t_));
    Real bc2 = Real(1) - std::pow(double(cfg_.beta2), double(t_));
    for (auto& [name, p] : reg.params) {
      auto g = grads.of(*p);
      if (!cfg_.decoupled && cfg_.weight_decay > 0)
        for (size_t i = 0; i < g.size(); ++i) g[i] += cfg_.weight_decay * (*p->data)[i];
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(p->size(), Real(0));
        st.v.assign(p->size(), Real(0));
      }
      auto& pv = *p->data;
      if (cfg_.decoupled && cfg_.weight_decay > 0)
        for (size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * cfg_.weight_decay * pv[i];
      for (size_t i = 0; i < pv.size(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (Real(1) - cfg_.beta1) * g[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (Real(1) - cfg_.beta2) * g[i] * g[i];
        Real mhat = st.m[i] / bc1;
        Real vhat = st.v[i] / bc2;
        pv[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  struct State {
    std::vector<Real> m, v;
  };
  AdamConfig<Real> cfg_;
  std::map<std::string, State> state_;
  long t_ = 0;
};

// ---- layers ----------------------------------------------------------------

template <class Real>
struct Linear {
  Tensor<Real> W, b;

  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng) {
    W = randn<Real>({in, out}, rng, Real(1.0 / std::sqrt(double(in))));
    b = Tensor<Real>::zeros({out});
  }
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    r.add(prefix + ".W", &W);
    r.add(prefix + ".b", &b);
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x) const {
    return t.add(t.matmul(x, W), b);
  }
};

template <class Real>
struct LayerNorm {
  Tensor<Real> g, b;

  LayerNorm() = default;
  explicit LayerNorm(int dim) {
    g = Tensor<Real>::full({dim}, Real(1));
    b = Tensor<Real>::zeros({dim});
  }
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    r.add(prefix + ".g", &g);
    r.add(prefix + ".b", &b);
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x) const {
    return t.layer_norm(x, g, b);
  }
};

template <class Real>
struct MultiHeadAttention {
  int dim = 0, heads = 0;
  Linear<Real> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(int dim_, int heads_, std::mt19937_64& rng)
      : dim(dim_), heads(heads_), wq(dim_, dim_, rng), wk(dim_, dim_, rng), wv(dim_, dim_, rng),
        wo(dim_, dim_, rng) {
    if (dim % heads != 0) throw Error(ErrorCode::config, "attention dim not divisible by heads");
  }
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    wq.reg(r, prefix + ".q");
    wk.reg(r, prefix + ".k");
    wv.reg(r, prefix + ".v");
    wo.reg(r, prefix + ".o");
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& q_in, const Tensor<Real>& kv_in,
                       bool causal = false) const {
    auto q = wq.forward(t, q_in);
    auto k = wk.forward(t, kv_in);
    auto v = wv.forward(t, kv_in);
    int hd = dim / heads;
    std::vector<Tensor<Real>> outs;
    outs.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
      auto qh = t.slice_cols(q, h * hd, hd);
      auto kh = t.slice_cols(k, h * hd, hd);
      auto vh = t.slice_cols(v, h * hd, hd);
      outs.push_back(t.attention(qh, kh, vh, causal));
    }
    return wo.forward(t, t.concat_cols(outs));
  }
};

template <class Real>
struct FeedForward {
  Linear<Real> l1, l2;

  FeedForward() = default;
  FeedForward(int dim, int hidden, std::mt19937_64& rng)
      : l1(dim, hidden, rng), l2(hidden, dim, rng) {}
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    l1.reg(r, prefix + ".l1");
    l2.reg(r, prefix + ".l2");
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x) const {
    return l2.forward(t, t.gelu(l1.forward(t, x)));
  }
};

// Pre-norm transformer encoder block.
template <class Real>
struct EncoderBlock {
  LayerNorm<Real> ln1, ln2;
  MultiHeadAttention<Real> attn;
  FeedForward<Real> ff;

  EncoderBlock() = default;
  EncoderBlock(int dim, int heads, std::mt19937_64& rng)
      : ln1(dim), ln2(dim), attn(dim, heads, rng), ff(dim, dim * 4, rng) {}
  void reg(ParamRegistry<Real>& r, const std::string& prefix) {
    ln1.reg(r, prefix + ".ln1");
    ln2.reg(r, prefix + ".ln2");
    attn.reg(r, prefix + ".attn");
    ff.reg(r, prefix + ".ff");
  }
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x) const {
    auto h = ln1.forward(t, x);
    auto y = t.add(x, attn.forward(t, h, h));
    return t.add(y, ff.forward(t, ln2.forward(t, y)));
  }
};

// Pre-norm decoder block: causal self-attention, cross-attention to memory, MLP.
template <class Real>
struct DecoderBlock {
  LayerNorm<Real> ln1, ln2, ln3;
  MultiHeadAttention<Real> self_attn, cross_attn;
  FeedForward<Real> ff;

  DecoderBlock() = default;
  DecoderBlock(int dim, int heads, std::mt19937_64& rng)
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
  Tensor<Real> forward(Tape<Real>& t, const Tensor<Real>& x, const Tensor<Real>& memory) const {
    auto h = ln1.forward(t, x);
    auto y = t.add(x, self_attn.forward(t, h, h, /*causal=*/true));
    y = t.add(y, cross_attn.forward(t, ln2.forward(t, y), memory));
    return t.add(y, ff.forward(t, ln3.forward(t, y)));
  }
};

// Fixed sinusoidal position table [T, D]; not a parameter.
template <class Real>
Tensor<Real> sinusoidal_positions(int t_len, int dim) {
  auto p = Tensor<Real>::zeros({t_len, dim});
  for (int t = 0; t < t_len; ++t)
    for (int j = 0; j < dim / 2; ++j) {
      double freq = std::pow(10000.0, -2.0 * j / dim);
      (*p.data)[size_t(t) * dim + 2 * j] = Real(std::sin(t * freq));
      (*p.data)[size_t(t) * dim + 2 * j + 1] = Real(std::cos(t * freq));
    }
  return p;
}

// Sinusoidal embedding of a (possibly fractional) scalar position, length D.
template <class Real>
Tensor<Real> sinusoidal_embedding(double pos, int dim) {
  auto e = Tensor<Real>::zeros({dim});
  for (int j = 0; j < dim / 2; ++j) {
    double freq = std::pow(10000.0, -2.0 * j / dim);
    (*e.data)[size_t(2 * j)] = Real(std::sin(pos * freq));
    (*e.data)[size_t(2 * j + 1)] = Real(std::cos(pos * freq));
  }
  return e;
}

}  // namespace gf
