#pragma once

// Dense row-major tensors with a tape-based reverse-mode autodiff engine.
// Templated on the scalar type: float for training, double for gradient
// verification (finite-difference checks are unreliable in 32-bit).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gf {

enum class ErrorCode { config, shape, numeric, missing_dependency, io };

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class Real>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<Real>> data;
  bool requires_grad = false;
  std::uint64_t uid = 0;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shp, bool rg = false) {
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::make_shared<std::vector<Real>>(numel(t.shape), Real(0));
    t.requires_grad = rg;
    t.uid = next_uid();
    return t;
  }

  static Tensor full(std::vector<int> shp, Real v, bool rg = false) {
    Tensor t = zeros(std::move(shp), rg);
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shp, std::vector<Real> values, bool rg = false) {
    if (numel(shp) != values.size())
      throw Error(ErrorCode::shape, "Tensor::from: " + shape_str(shp) + " does not hold " +
                                        std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::make_shared<std::vector<Real>>(std::move(values));
    t.requires_grad = rg;
    t.uid = next_uid();
    return t;
  }

  static Tensor scalar(Real v, bool rg = false) { return from({1}, {v}, rg); }

  static size_t numel(const std::vector<int>& shp) {
    size_t n = 1;
    for (int d : shp) n *= size_t(d);
    return n;
  }

  size_t size() const { return data ? data->size() : 0; }
  bool defined() const { return bool(data); }
  int ndim() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  // 2D accessors; last axis is the fastest varying one.
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 0 : shape.back(); }

  const std::vector<Real>& values() const { return *data; }
  std::vector<Real>& values() { return *data; }
  Real item() const {
    if (size() != 1) throw Error(ErrorCode::shape, "item() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
  }

  template <class Other>
  static Tensor cast(const Tensor<Other>& o) {
    Tensor t;
    t.shape = o.shape;
    t.data = std::make_shared<std::vector<Real>>(o.data->begin(), o.data->end());
    t.requires_grad = o.requires_grad;
    t.uid = next_uid();
    return t;
  }
};

template <class Real>
struct Gradients {
  std::unordered_map<std::uint64_t, std::vector<Real>> by_uid;

  std::vector<Real>& accum(std::uint64_t uid, size_t n) {
    auto& g = by_uid[uid];
    if (g.empty()) g.assign(n, Real(0));
    return g;
  }
  const std::vector<Real>* find(std::uint64_t uid) const {
    auto it = by_uid.find(uid);
    return it == by_uid.end() ? nullptr : &it->second;
  }
  // Gradient for a tensor; zeros if the tensor never influenced the loss.
  std::vector<Real> of(const Tensor<Real>& t) const {
    if (const auto* g = find(t.uid)) return *g;
    return std::vector<Real>(t.size(), Real(0));
  }
};

namespace detail {

// C[M,N] (+)= op(A) * op(B); 2D row-major, optional transposes.
template <class Real>
void gemm(Real* c, const Real* a, const Real* b, int m, int n, int k, bool ta, bool tb,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + size_t(m) * n, Real(0));
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      Real* ci = c + size_t(i) * n;
      const Real* ai = a + size_t(i) * k;
      for (int p = 0; p < k; ++p) {
        Real av = ai[p];
        const Real* bp = b + size_t(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      Real* ci = c + size_t(i) * n;
      const Real* ai = a + size_t(i) * k;
      for (int j = 0; j < n; ++j) {
        const Real* bj = b + size_t(j) * k;
        Real s = 0;
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const Real* ap = a + size_t(p) * m;
      const Real* bp = b + size_t(p) * n;
      for (int i = 0; i < m; ++i) {
        Real av = ap[i];
        Real* ci = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      Real* ci = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) {
        Real s = 0;
        for (int p = 0; p < k; ++p) s += a[size_t(p) * m + i] * b[size_t(j) * k + p];
        ci[j] += s;
      }
    }
  }
}

template <class Real>
inline Real gauss_cdf(Real x) {
  return Real(0.5) * (Real(1) + std::erf(x / Real(std::sqrt(2.0))));
}
template <class Real>
inline Real gauss_pdf(Real x) {
  return std::exp(Real(-0.5) * x * x) / Real(std::sqrt(2.0 * 3.14159265358979323846));
}

}  // namespace detail

// Records ops in creation order (topological by construction); backward walks
// the list in exact reverse order, accumulating gradients by tensor uid.
template <class Real>
class Tape {
 public:
  bool recording = true;
  // Fail-fast NaN/Inf detection after every op (debug mode).
  bool check_finite = false;

  void reset() { entries_.clear(); }
  size_t num_ops() const { return entries_.size(); }

  // ---- op set -------------------------------------------------------------

  Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool ta = false,
                      bool tb = false) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    int m = ta ? a.cols() : a.rows();
    int ka = ta ? a.rows() : a.cols();
    int kb = tb ? b.cols() : b.rows();
    int n = tb ? b.rows() : b.cols();
    if (ka != kb)
      throw Error(ErrorCode::shape,
                  "matmul: inner dims differ, " + shape_str(a.shape) + (ta ? "^T" : "") + " x " +
                      shape_str(b.shape) + (tb ? "^T" : ""));
    auto out = Tensor<Real>::zeros({m, n});
    detail::gemm(out.data->data(), a.data->data(), b.data->data(), m, n, ka, ta, tb, false);
    finish("matmul", out, {a, b});
    if (track(out, {a, b})) {
      record(out, [a, b, m, n, ka, ta, tb](const std::vector<Real>& go, Gradients<Real>& gr) {
        // dA = dC B^T, dB = A^T dC (for the untransposed case); transposed
        // operands swap roles accordingly.
        if (a.requires_grad) {
          auto& ga = gr.accum(a.uid, a.size());
          if (!ta)
            detail::gemm(ga.data(), go.data(), b.data->data(), m, ka, n, false, !tb, true);
          else
            detail::gemm(ga.data(), b.data->data(), go.data(), ka, m, n, tb, true, true);
        }
        if (b.requires_grad) {
          auto& gb = gr.accum(b.uid, b.size());
          if (!tb)
            detail::gemm(gb.data(), a.data->data(), go.data(), ka, n, m, !ta, false, true);
          else
            detail::gemm(gb.data(), go.data(), a.data->data(), n, ka, m, true, ta, true);
        }
      });
    }
    return out;
  }

  // Elementwise add; b may also be a vector broadcast across the rows of a.
  Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    bool bcast = broadcast_rows("add", a, b);
    auto out = Tensor<Real>::zeros(a.shape);
    const auto& av = *a.data;
    const auto& bv = *b.data;
    auto& ov = *out.data;
    size_t nb = bv.size();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[bcast ? i % nb : i];
    finish("add", out, {a, b});
    if (track(out, {a, b})) {
      record(out, [a, b, bcast](const std::vector<Real>& go, Gradients<Real>& gr) {
        if (a.requires_grad) {
          auto& ga = gr.accum(a.uid, a.size());
          for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad) {
          auto& gb = gr.accum(b.uid, b.size());
          size_t nb = b.size();
          for (size_t i = 0; i < go.size(); ++i) gb[bcast ? i % nb : i] += go[i];
        }
      });
    }
    return out;
  }

  Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    bool bcast = broadcast_rows("sub", a, b);
    auto out = Tensor<Real>::zeros(a.shape);
    const auto& av = *a.data;
    const auto& bv = *b.data;
    auto& ov = *out.data;
    size_t nb = bv.size();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[bcast ? i % nb : i];
    finish("sub", out, {a, b});
    if (track(out, {a, b})) {
      record(out, [a, b, bcast](const std::vector<Real>& go, Gradients<Real>& gr) {
        if (a.requires_grad) {
          auto& ga = gr.accum(a.uid, a.size());
          for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad) {
          auto& gb = gr.accum(b.uid, b.size());
          size_t nb = b.size();
          for (size_t i = 0; i < go.size(); ++i) gb[bcast ? i % nb : i] -= go[i];
        }
      });
    }
    return out;
  }

  Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    bool bcast = broadcast_rows("mul", a, b);
    auto out = Tensor<Real>::zeros(a.shape);
    const auto& av = *a.data;
    const auto& bv = *b.data;
    auto& ov = *out.data;
    size_t nb = bv.size();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[bcast ? i % nb : i];
    finish("mul", out, {a, b});
    if (track(out, {a, b})) {
      record(out, [a, b, bcast](const std::vector<Real>& go, Gradients<Real>& gr) {
        size_t nb = b.size();
        if (a.requires_grad) {
          auto& ga = gr.accum(a.uid, a.size());
          const auto& bv = *b.data;
          for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[bcast ? i % nb : i];
        }
        if (b.requires_grad) {
          auto& gb = gr.accum(b.uid, b.size());
          const auto& av = *a.data;
          for (size_t i = 0; i < go.size(); ++i) gb[bcast ? i % nb : i] += go[i] * av[i];
        }
      });
    }
    return out;
  }

  Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) (*out.data)[i] = (*a.data)[i] * c;
    finish("scale", out, {a});
    if (track(out, {a})) {
      record(out, [a, c](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
      });
    }
    return out;
  }

  Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) (*out.data)[i] = (*a.data)[i] + c;
    finish("add_scalar", out, {a});
    if (track(out, {a})) {
      record(out, [a](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      });
    }
    return out;
  }

  // Softmax over the last axis.
  Tensor<Real> softmax(const Tensor<Real>& a) {
    int d = last_dim("softmax", a);
    auto out = Tensor<Real>::zeros(a.shape);
    size_t rows = a.size() / size_t(d);
    for (size_t r = 0; r < rows; ++r) {
      const Real* x = a.data->data() + r * d;
      Real* y = out.data->data() + r * d;
      Real mx = *std::max_element(x, x + d);
      Real s = 0;
      for (int j = 0; j < d; ++j) {
        y[j] = std::exp(x[j] - mx);
        s += y[j];
      }
      for (int j = 0; j < d; ++j) y[j] /= s;
    }
    finish("softmax", out, {a});
    if (track(out, {a})) {
      record(out, [a, out, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        size_t rows = a.size() / size_t(d);
        for (size_t r = 0; r < rows; ++r) {
          const Real* y = out.data->data() + r * d;
          const Real* g = go.data() + r * d;
          Real dot = 0;
          for (int j = 0; j < d; ++j) dot += g[j] * y[j];
          for (int j = 0; j < d; ++j) ga[r * d + j] += y[j] * (g[j] - dot);
        }
      });
    }
    return out;
  }

  // Normalize the last axis to zero mean / unit variance, then affine (g, b).
  Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                          Real eps = Real(1e-5)) {
    int d = last_dim("layer_norm", x);
    if (int(gain.size()) != d || int(bias.size()) != d)
      throw Error(ErrorCode::shape, "layer_norm: gain/bias must have dim " + std::to_string(d));
    auto out = Tensor<Real>::zeros(x.shape);
    size_t rows = x.size() / size_t(d);
    auto xhat = std::make_shared<std::vector<Real>>(x.size());
    auto inv_sd = std::make_shared<std::vector<Real>>(rows);
    for (size_t r = 0; r < rows; ++r) {
      const Real* xr = x.data->data() + r * d;
      Real mu = 0;
      for (int j = 0; j < d; ++j) mu += xr[j];
      mu /= d;
      Real var = 0;
      for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= d;
      Real isd = Real(1) / std::sqrt(var + eps);
      (*inv_sd)[r] = isd;
      Real* y = out.data->data() + r * d;
      for (int j = 0; j < d; ++j) {
        Real xh = (xr[j] - mu) * isd;
        (*xhat)[r * d + j] = xh;
        y[j] = xh * (*gain.data)[j] + (*bias.data)[j];
      }
    }
    finish("layer_norm", out, {x, gain, bias});
    if (track(out, {x, gain, bias})) {
      record(out, [x, gain, bias, xhat, inv_sd, d](const std::vector<Real>& go,
                                                   Gradients<Real>& gr) {
        size_t rows = x.size() / size_t(d);
        if (gain.requires_grad) {
          auto& gg = gr.accum(gain.uid, gain.size());
          for (size_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) gg[j] += go[r * d + j] * (*xhat)[r * d + j];
        }
        if (bias.requires_grad) {
          auto& gb = gr.accum(bias.uid, bias.size());
          for (size_t r = 0; r < rows; ++r)
            for (int j = 0; j < d; ++j) gb[j] += go[r * d + j];
        }
        if (x.requires_grad) {
          auto& gx = gr.accum(x.uid, x.size());
          for (size_t r = 0; r < rows; ++r) {
            Real m1 = 0, m2 = 0;
            for (int j = 0; j < d; ++j) {
              Real dxh = go[r * d + j] * (*gain.data)[j];
              m1 += dxh;
              m2 += dxh * (*xhat)[r * d + j];
            }
            m1 /= d;
            m2 /= d;
            for (int j = 0; j < d; ++j) {
              Real dxh = go[r * d + j] * (*gain.data)[j];
              gx[r * d + j] += (*inv_sd)[r] * (dxh - m1 - (*xhat)[r * d + j] * m2);
            }
          }
        }
      });
    }
    return out;
  }

  Tensor<Real> gelu(const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) {
      Real x = (*a.data)[i];
      (*out.data)[i] = x * detail::gauss_cdf(x);
    }
    finish("gelu", out, {a});
    if (track(out, {a})) {
      record(out, [a](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) {
          Real x = (*a.data)[i];
          ga[i] += go[i] * (detail::gauss_cdf(x) + x * detail::gauss_pdf(x));
        }
      });
    }
    return out;
  }

  Tensor<Real> sigmoid(const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) {
      Real x = (*a.data)[i];
      (*out.data)[i] = Real(1) / (Real(1) + std::exp(-x));
    }
    finish("sigmoid", out, {a});
    if (track(out, {a})) {
      record(out, [a, out](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) {
          Real y = (*out.data)[i];
          ga[i] += go[i] * y * (Real(1) - y);
        }
      });
    }
    return out;
  }

  Tensor<Real> tanh_(const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) (*out.data)[i] = std::tanh((*a.data)[i]);
    finish("tanh", out, {a});
    if (track(out, {a})) {
      record(out, [a, out](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) {
          Real y = (*out.data)[i];
          ga[i] += go[i] * (Real(1) - y * y);
        }
      });
    }
    return out;
  }

  Tensor<Real> log_(const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) (*out.data)[i] = std::log((*a.data)[i]);
    finish("log", out, {a});
    if (track(out, {a})) {
      record(out, [a](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / (*a.data)[i];
      });
    }
    return out;
  }

  Tensor<Real> exp_(const Tensor<Real>& a) {
    auto out = Tensor<Real>::zeros(a.shape);
    for (size_t i = 0; i < a.size(); ++i) (*out.data)[i] = std::exp((*a.data)[i]);
    finish("exp", out, {a});
    if (track(out, {a})) {
      record(out, [a, out](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*out.data)[i];
      });
    }
    return out;
  }

  Tensor<Real> sum(const Tensor<Real>& a) {
    Real s = std::accumulate(a.data->begin(), a.data->end(), Real(0));
    auto out = Tensor<Real>::scalar(s);
    finish("sum", out, {a});
    if (track(out, {a})) {
      record(out, [a](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go[0];
      });
    }
    return out;
  }

  Tensor<Real> mean(const Tensor<Real>& a) {
    Real s = std::accumulate(a.data->begin(), a.data->end(), Real(0));
    size_t n = a.size();
    auto out = Tensor<Real>::scalar(s / Real(n));
    finish("mean", out, {a});
    if (track(out, {a})) {
      record(out, [a, n](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        Real g = go[0] / Real(n);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
      });
    }
    return out;
  }

  // [T,D] -> [D], mean over rows.
  Tensor<Real> mean_rows(const Tensor<Real>& a) {
    require_2d("mean_rows", a);
    int t = a.rows(), d = a.cols();
    auto out = Tensor<Real>::zeros({d});
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) (*out.data)[size_t(j)] += (*a.data)[size_t(i) * d + j];
    for (int j = 0; j < d; ++j) (*out.data)[size_t(j)] /= Real(t);
    finish("mean_rows", out, {a});
    if (track(out, {a})) {
      record(out, [a, t, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < d; ++j) ga[size_t(i) * d + j] += go[size_t(j)] / Real(t);
      });
    }
    return out;
  }

  Tensor<Real> slice_rows(const Tensor<Real>& a, int r0, int n) {
    require_2d("slice_rows", a);
    if (r0 < 0 || n < 0 || r0 + n > a.rows())
      throw Error(ErrorCode::shape, "slice_rows: [" + std::to_string(r0) + "," +
                                        std::to_string(r0 + n) + ") out of " +
                                        std::to_string(a.rows()) + " rows");
    int d = a.cols();
    auto out = Tensor<Real>::zeros({n, d});
    std::copy_n(a.data->data() + size_t(r0) * d, size_t(n) * d, out.data->data());
    finish("slice_rows", out, {a});
    if (track(out, {a})) {
      record(out, [a, r0, n, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (size_t i = 0; i < size_t(n) * d; ++i) ga[size_t(r0) * d + i] += go[i];
      });
    }
    return out;
  }

  Tensor<Real> slice_cols(const Tensor<Real>& a, int c0, int n) {
    require_2d("slice_cols", a);
    if (c0 < 0 || n < 0 || c0 + n > a.cols())
      throw Error(ErrorCode::shape, "slice_cols: [" + std::to_string(c0) + "," +
                                        std::to_string(c0 + n) + ") out of " +
                                        std::to_string(a.cols()) + " cols");
    int t = a.rows(), d = a.cols();
    auto out = Tensor<Real>::zeros({t, n});
    for (int i = 0; i < t; ++i)
      std::copy_n(a.data->data() + size_t(i) * d + c0, n, out.data->data() + size_t(i) * n);
    finish("slice_cols", out, {a});
    if (track(out, {a})) {
      record(out, [a, c0, n, t, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& ga = gr.accum(a.uid, a.size());
        for (int i = 0; i < t; ++i)
          for (int j = 0; j < n; ++j) ga[size_t(i) * d + c0 + j] += go[size_t(i) * n + j];
      });
    }
    return out;
  }

  Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    return concat(parts, 0);
  }
  Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    return concat(parts, 1);
  }

  Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
    if (parts.empty()) throw Error(ErrorCode::shape, "concat: no inputs");
    for (const auto& p : parts) require_2d("concat", p);
    int t = 0, d = 0;
    if (axis == 0) {
      d = parts[0].cols();
      for (const auto& p : parts) {
        if (p.cols() != d) throw Error(ErrorCode::shape, "concat rows: column mismatch");
        t += p.rows();
      }
    } else {
      t = parts[0].rows();
      for (const auto& p : parts) {
        if (p.rows() != t) throw Error(ErrorCode::shape, "concat cols: row mismatch");
        d += p.cols();
      }
    }
    auto out = Tensor<Real>::zeros({t, d});
    if (axis == 0) {
      size_t off = 0;
      for (const auto& p : parts) {
        std::copy_n(p.data->data(), p.size(), out.data->data() + off);
        off += p.size();
      }
    } else {
      int coff = 0;
      for (const auto& p : parts) {
        int pc = p.cols();
        for (int i = 0; i < t; ++i)
          std::copy_n(p.data->data() + size_t(i) * pc, pc,
                      out.data->data() + size_t(i) * d + coff);
        coff += pc;
      }
    }
    finish("concat", out, parts);
    if (track(out, parts)) {
      record(out, [parts, axis, t, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        if (axis == 0) {
          size_t off = 0;
          for (const auto& p : parts) {
            if (p.requires_grad) {
              auto& gp = gr.accum(p.uid, p.size());
              for (size_t i = 0; i < p.size(); ++i) gp[i] += go[off + i];
            }
            off += p.size();
          }
        } else {
          int coff = 0;
          for (const auto& p : parts) {
            int pc = p.cols();
            if (p.requires_grad) {
              auto& gp = gr.accum(p.uid, p.size());
              for (int i = 0; i < t; ++i)
                for (int j = 0; j < pc; ++j)
                  gp[size_t(i) * pc + j] += go[size_t(i) * d + coff + j];
            }
            coff += pc;
          }
        }
      });
    }
    return out;
  }

  // table [V,D], ids -> [len(ids), D]
  Tensor<Real> embedding(const Tensor<Real>& table, const std::vector<int>& ids) {
    require_2d("embedding", table);
    int v = table.rows(), d = table.cols();
    for (int id : ids)
      if (id < 0 || id >= v)
        throw Error(ErrorCode::shape,
                    "embedding: id " + std::to_string(id) + " outside table of " +
                        std::to_string(v));
    auto out = Tensor<Real>::zeros({int(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(table.data->data() + size_t(ids[i]) * d, d, out.data->data() + i * d);
    finish("embedding", out, {table});
    if (track(out, {table})) {
      record(out, [table, ids, d](const std::vector<Real>& go, Gradients<Real>& gr) {
        auto& gt = gr.accum(table.uid, table.size());
        for (size_t i = 0; i < ids.size(); ++i)
          for (int j = 0; j < d; ++j) gt[size_t(ids[i]) * d + j] += go[i * d + j];
      });
    }
    return out;
  }

  // Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.
  // Composite of primitives, so the backward pass comes for free.
  Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                         bool causal = false) {
    require_2d("attention", q);
    if (k.cols() != q.cols() || v.rows() != k.rows())
      throw Error(ErrorCode::shape, "attention: q" + shape_str(q.shape) + " k" +
                                        shape_str(k.shape) + " v" + shape_str(v.shape));
    Real sc = Real(1) / std::sqrt(Real(q.cols()));
    auto scores = scale(matmul(q, k, false, true), sc);
    if (causal) {
      auto mask = Tensor<Real>::zeros({q.rows(), k.rows()});
      for (int i = 0; i < q.rows(); ++i)
        for (int j = i + 1; j < k.rows(); ++j) (*mask.data)[size_t(i) * k.rows() + j] = Real(-1e30);
      scores = add(scores, mask);
    }
    return matmul(softmax(scores), v);
  }

  // ---- backward -----------------------------------------------------------

  Gradients<Real> backward(const Tensor<Real>& loss) {
    if (loss.size() != 1)
      throw Error(ErrorCode::shape, "backward: loss must be scalar, got " + shape_str(loss.shape));
    Gradients<Real> gr;
    gr.accum(loss.uid, 1)[0] = Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const auto* go = gr.find(it->out);
      if (go) it->back(*go, gr);
    }
    return gr;
  }

 private:
  struct Entry {
    std::uint64_t out;
    std::function<void(const std::vector<Real>&, Gradients<Real>&)> back;
  };
  std::vector<Entry> entries_;

  static void require_2d(const char* op, const Tensor<Real>& t) {
    if (t.ndim() != 2)
      throw Error(ErrorCode::shape, std::string(op) + ": expected 2D tensor, got " +
                                        shape_str(t.shape));
  }
  static int last_dim(const char* op, const Tensor<Real>& t) {
    if (t.ndim() < 1 || t.shape.back() < 1)
      throw Error(ErrorCode::shape, std::string(op) + ": bad shape " + shape_str(t.shape));
    return t.shape.back();
  }
  // True if b broadcasts across rows of a; throws on any other mismatch.
  static bool broadcast_rows(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape == b.shape) return false;
    if (a.size() == b.size() && !a.shape.empty() && !b.shape.empty() &&
        a.shape.back() == b.shape.back())
      return false;  // same layout, e.g. [1,D] vs [D]
    if (b.size() > 0 && a.size() % b.size() == 0 && a.ndim() >= 1 &&
        int(b.size()) % a.shape.back() == 0 && a.size() != b.size())
      return true;
    throw Error(ErrorCode::shape, std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                      " vs " + shape_str(b.shape));
  }

  bool track(Tensor<Real>& out, const std::vector<Tensor<Real>>& inputs) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad;
    out.requires_grad = rg;
    return recording && rg;
  }

  void finish(const char* op, const Tensor<Real>& out, const std::vector<Tensor<Real>>&) {
    if (check_finite) {
      for (Real v : *out.data)
        if (!std::isfinite(double(v)))
          throw Error(ErrorCode::numeric, std::string(op) + ": non-finite value in output");
    }
  }

  void record(const Tensor<Real>& out,
              std::function<void(const std::vector<Real>&, Gradients<Real>&)> back) {
    entries_.push_back({out.uid, std::move(back)});
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace gf
