#pragma once

// Linear probing utilities: z-scored logistic regression over fixed feature
// vectors. Used to ask what information a frozen feature family exposes to a
// linear readout (clip tags, event onsets).

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "genfeat/features.hpp"
#include "genfeat/scenes.hpp"
#include "genfeat/tensor.hpp"

namespace gf::probes {

struct LogisticProbe {
  std::vector<double> w;
  double b = 0;
  std::vector<double> mean, sd;  // train-set standardization

  double score(const std::vector<float>& x) const {
    double s = b;
    for (size_t i = 0; i < w.size(); ++i) s += w[i] * ((double(x[i]) - mean[i]) / sd[i]);
    return 1.0 / (1.0 + std::exp(-s));
  }
};

// Per-sample SGD with class balancing so a 0.5 threshold stays meaningful on
// skewed label sets.
inline LogisticProbe train_logistic(const std::vector<std::vector<float>>& xs,
                                    const std::vector<int>& ys, int epochs, double lr,
                                    std::uint64_t seed, bool balanced = true) {
  if (xs.empty() || xs.size() != ys.size())
    throw Error(ErrorCode::shape, "probe: need matching non-empty samples and labels");
  size_t d = xs[0].size();
  LogisticProbe p;
  p.w.assign(d, 0.0);
  p.mean.assign(d, 0.0);
  p.sd.assign(d, 1.0);
  for (const auto& x : xs)
    for (size_t i = 0; i < d; ++i) p.mean[i] += double(x[i]) / double(xs.size());
  for (const auto& x : xs)
    for (size_t i = 0; i < d; ++i) {
      double c = double(x[i]) - p.mean[i];
      p.sd[i] += c * c / double(xs.size());
    }
  for (size_t i = 0; i < d; ++i) p.sd[i] = std::max(1e-6, std::sqrt(p.sd[i] - 1.0));

  double pos = 0;
  for (int y : ys) pos += y;
  double wpos = 1.0, wneg = 1.0;
  if (balanced && pos > 0 && pos < double(ys.size())) {
    wpos = double(ys.size()) / (2.0 * pos);
    wneg = double(ys.size()) / (2.0 * (double(ys.size()) - pos));
  }

  std::mt19937_64 rng(seed);
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t idx : order) {
      const auto& x = xs[idx];
      double pr = p.score(x);
      double g = (pr - double(ys[idx])) * (ys[idx] ? wpos : wneg);
      for (size_t i = 0; i < d; ++i)
        p.w[i] -= lr * g * ((double(x[i]) - p.mean[i]) / p.sd[i]);
      p.b -= lr * g;
    }
  }
  return p;
}

struct BinaryProbeResult {
  double precision = 0, recall = 0, f1 = 0;
};

inline BinaryProbeResult eval_binary_probe(const LogisticProbe& p,
                                           const std::vector<std::vector<float>>& xs,
                                           const std::vector<int>& ys, double thresh = 0.5) {
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    bool pred = p.score(xs[i]) >= thresh;
    if (pred && ys[i])
      ++tp;
    else if (pred)
      ++fp;
    else if (ys[i])
      ++fn;
  }
  BinaryProbeResult r;
  r.precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// Token-level onset indicators: 1 when some event onset falls inside the
// token's frame span.
inline std::vector<int> onset_token_labels(const scenes::SceneAnnotation& ann, int frames, int r) {
  std::vector<int> lab(size_t(frames / r), 0);
  for (const auto& e : ann.events) {
    int tok = e.onset / r;
    if (tok >= 0 && tok < int(lab.size())) lab[size_t(tok)] = 1;
  }
  return lab;
}

// Trains an onset probe on one feature family and scores it on held-out
// scenes. Feature sequences and annotations are index-aligned.
inline BinaryProbeResult onset_probe(const std::vector<FeatureSeq>& train_feats,
                                     const std::vector<const scenes::SceneAnnotation*>& train_anns,
                                     const std::vector<FeatureSeq>& test_feats,
                                     const std::vector<const scenes::SceneAnnotation*>& test_anns,
                                     int frames, std::uint64_t seed, int epochs = 30,
                                     double lr = 0.05) {
  auto flatten = [&](const std::vector<FeatureSeq>& feats,
                     const std::vector<const scenes::SceneAnnotation*>& anns,
                     std::vector<std::vector<float>>& xs, std::vector<int>& ys) {
    for (size_t i = 0; i < feats.size(); ++i) {
      const auto& fs = feats[i];
      auto lab = onset_token_labels(*anns[i], frames, fs.frame_divisor);
      if (int(lab.size()) != fs.tokens)
        throw Error(ErrorCode::shape, "onset probe: token count mismatch");
      for (int t = 0; t < fs.tokens; ++t) {
        // current and previous token side by side: lets the linear readout
        // realize a temporal difference, which is what an onset is
        std::vector<float> x(fs.v.begin() + size_t(t) * fs.dim,
                             fs.v.begin() + size_t(t + 1) * fs.dim);
        if (t > 0)
          x.insert(x.end(), fs.v.begin() + size_t(t - 1) * fs.dim,
                   fs.v.begin() + size_t(t) * fs.dim);
        else
          x.insert(x.end(), size_t(fs.dim), 0.0f);
        xs.push_back(std::move(x));
        ys.push_back(lab[size_t(t)]);
      }
    }
  };
  std::vector<std::vector<float>> train_x, test_x;
  std::vector<int> train_y, test_y;
  flatten(train_feats, train_anns, train_x, train_y);
  flatten(test_feats, test_anns, test_x, test_y);
  auto p = train_logistic(train_x, train_y, epochs, lr, seed);
  return eval_binary_probe(p, test_x, test_y);
}

}  // namespace gf::probes
