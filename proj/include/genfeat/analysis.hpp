#pragma once

// Feature forensics: PCA via Jacobi eigendecomposition, k-means++ clustering,
// and the contour score that turns "defined temporal contours" into a
// boundary-detection F1 against annotated event edges.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "genfeat/tensor.hpp"

namespace gf::analysis {

struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), 0.0) {}
  double& at(int i, int j) { return v[size_t(i) * cols + j]; }
  double at(int i, int j) const { return v[size_t(i) * cols + j]; }
};

// ---- PCA -------------------------------------------------------------------

namespace detail {

// Cyclic Jacobi rotations on a symmetric matrix. a is destroyed; eigenvectors
// accumulate in vecs (columns).
inline void jacobi_eigh(Matrix& a, std::vector<double>& vals, Matrix& vecs) {
  int n = a.rows;
  vecs = Matrix(n, n);
  for (int i = 0; i < n; ++i) vecs.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-22) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a.at(q, q) - a.at(p, p)) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double aip = a.at(i, p), aiq = a.at(i, q);
          a.at(i, p) = c * aip - s * aiq;
          a.at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = a.at(p, i), aqi = a.at(q, i);
          a.at(p, i) = c * api - s * aqi;
          a.at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          double vip = vecs.at(i, p), viq = vecs.at(i, q);
          vecs.at(i, p) = c * vip - s * viq;
          vecs.at(i, q) = s * vip + c * viq;
        }
      }
  }
  vals.resize(size_t(n));
  for (int i = 0; i < n; ++i) vals[size_t(i)] = a.at(i, i);
}

}  // namespace detail

struct PcaResult {
  Matrix components;                       // k x d, orthonormal rows
  Matrix projections;                      // rows x k
  std::vector<double> explained_variance;  // fraction of total variance per component
  std::vector<double> eigenvalues;
  std::vector<double> mean;
  double total_variance = 0;
  bool rank_deficient = false;  // fewer informative components than requested
};

inline PcaResult pca(const Matrix& x, int k = 8) {
  if (x.rows < k) throw Error(ErrorCode::config, "pca: fewer rows than requested components");
  int d = x.cols;
  PcaResult res;
  res.mean.assign(size_t(d), 0.0);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < d; ++j) res.mean[size_t(j)] += x.at(i, j);
  for (auto& m : res.mean) m /= double(x.rows);

  Matrix cov(d, d);
  for (int i = 0; i < x.rows; ++i)
    for (int a = 0; a < d; ++a) {
      double xa = x.at(i, a) - res.mean[size_t(a)];
      for (int b = a; b < d; ++b)
        cov.at(a, b) += xa * (x.at(i, b) - res.mean[size_t(b)]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      cov.at(a, b) /= double(x.rows);
      cov.at(b, a) = cov.at(a, b);
    }
  for (int a = 0; a < d; ++a) res.total_variance += cov.at(a, a);

  std::vector<double> vals;
  Matrix vecs;
  detail::jacobi_eigh(cov, vals, vecs);
  std::vector<int> order(size_t(d), 0);
  for (int i = 0; i < d; ++i) order[size_t(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return vals[size_t(a)] > vals[size_t(b)]; });

  double tol = 1e-12 * std::max(1.0, std::abs(vals[size_t(order[0])]));
  int avail = 0;
  for (int i = 0; i < std::min(k, d); ++i)
    if (vals[size_t(order[size_t(i)])] > tol) ++avail;
  res.rank_deficient = avail < k;
  int kk = std::max(1, avail);

  res.components = Matrix(kk, d);
  for (int c = 0; c < kk; ++c) {
    int ev = order[size_t(c)];
    res.eigenvalues.push_back(std::max(0.0, vals[size_t(ev)]));
    for (int j = 0; j < d; ++j) res.components.at(c, j) = vecs.at(j, ev);
  }
  for (double ev : res.eigenvalues)
    res.explained_variance.push_back(res.total_variance > 0 ? ev / res.total_variance : 0.0);

  res.projections = Matrix(x.rows, kk);
  for (int i = 0; i < x.rows; ++i)
    for (int c = 0; c < kk; ++c) {
      double s = 0;
      for (int j = 0; j < d; ++j)
        s += (x.at(i, j) - res.mean[size_t(j)]) * res.components.at(c, j);
      res.projections.at(i, c) = s;
    }
  return res;
}

// ---- k-means ---------------------------------------------------------------

struct KmeansResult {
  std::vector<int> assignments;
  Matrix centers;
  double inertia = 0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  bool degenerate = false;              // all rows identical -> single cluster
};

inline KmeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, int max_iters = 100,
                           double tol = 1e-6) {
  if (x.rows < k) throw Error(ErrorCode::config, "kmeans: fewer rows than clusters");
  KmeansResult res;
  res.assignments.assign(size_t(x.rows), 0);

  bool all_same = true;
  for (int i = 1; i < x.rows && all_same; ++i)
    for (int j = 0; j < x.cols; ++j)
      if (x.at(i, j) != x.at(0, j)) {
        all_same = false;
        break;
      }
  if (all_same) {
    res.degenerate = true;
    res.centers = Matrix(1, x.cols);
    for (int j = 0; j < x.cols; ++j) res.centers.at(0, j) = x.at(0, j);
    return res;
  }

  auto dist2 = [&](int row, const Matrix& centers, int c) {
    double s = 0;
    for (int j = 0; j < x.cols; ++j) {
      double d = x.at(row, j) - centers.at(c, j);
      s += d * d;
    }
    return s;
  };

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  res.centers = Matrix(k, x.cols);
  std::uniform_int_distribution<int> first(0, x.rows - 1);
  int c0 = first(rng);
  for (int j = 0; j < x.cols; ++j) res.centers.at(0, j) = x.at(c0, j);
  std::vector<double> mind(size_t(x.rows));
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (int i = 0; i < x.rows; ++i) {
      double best = dist2(i, res.centers, 0);
      for (int cc = 1; cc < c; ++cc) best = std::min(best, dist2(i, res.centers, cc));
      mind[size_t(i)] = best;
      total += best;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng), acc = 0;
    int pick = x.rows - 1;
    for (int i = 0; i < x.rows; ++i) {
      acc += mind[size_t(i)];
      if (acc >= r) {
        pick = i;
        break;
      }
    }
    for (int j = 0; j < x.cols; ++j) res.centers.at(c, j) = x.at(pick, j);
  }

  double prev = -1;
  for (int iter = 0; iter < max_iters; ++iter) {
    double inertia = 0;
    for (int i = 0; i < x.rows; ++i) {
      int best = 0;
      double bd = dist2(i, res.centers, 0);
      for (int c = 1; c < k; ++c) {
        double d = dist2(i, res.centers, c);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      res.assignments[size_t(i)] = best;
      inertia += bd;
    }
    res.inertia = inertia;
    res.inertia_history.push_back(inertia);

    Matrix sums(k, x.cols);
    std::vector<int> counts(size_t(k), 0);
    for (int i = 0; i < x.rows; ++i) {
      int c = res.assignments[size_t(i)];
      ++counts[size_t(c)];
      for (int j = 0; j < x.cols; ++j) sums.at(c, j) += x.at(i, j);
    }
    for (int c = 0; c < k; ++c)
      if (counts[size_t(c)] > 0)
        for (int j = 0; j < x.cols; ++j) res.centers.at(c, j) = sums.at(c, j) / counts[size_t(c)];

    if (prev >= 0 && std::abs(prev - inertia) <= tol * std::max(1.0, prev)) break;
    prev = inertia;
  }
  return res;
}

inline double silhouette(const Matrix& x, const std::vector<int>& assign) {
  int k = 0;
  for (int a : assign) k = std::max(k, a + 1);
  if (k < 2) return 0.0;
  auto d = [&](int i, int j) {
    double s = 0;
    for (int c = 0; c < x.cols; ++c) {
      double t = x.at(i, c) - x.at(j, c);
      s += t * t;
    }
    return std::sqrt(s);
  };
  double total = 0;
  int counted = 0;
  for (int i = 0; i < x.rows; ++i) {
    std::vector<double> mean_d(size_t(k), 0.0);
    std::vector<int> counts(size_t(k), 0);
    for (int j = 0; j < x.rows; ++j) {
      if (j == i) continue;
      mean_d[size_t(assign[size_t(j)])] += d(i, j);
      ++counts[size_t(assign[size_t(j)])];
    }
    int own = assign[size_t(i)];
    if (counts[size_t(own)] == 0) continue;
    double a = mean_d[size_t(own)] / counts[size_t(own)];
    double b = 1e300;
    for (int c = 0; c < k; ++c)
      if (c != own && counts[size_t(c)] > 0) b = std::min(b, mean_d[size_t(c)] / counts[size_t(c)]);
    if (b >= 1e300) continue;
    total += (b - a) / std::max(a, b);
    ++counted;
  }
  return counted > 0 ? total / counted : 0.0;
}

// ---- contour score ---------------------------------------------------------

struct ContourScore {
  double precision = 0, recall = 0, f1 = 0;
  std::vector<int> predicted_boundaries;
};

inline std::vector<int> transitions(const std::vector<int>& assign) {
  std::vector<int> b;
  for (size_t i = 1; i < assign.size(); ++i)
    if (assign[i] != assign[i - 1]) b.push_back(int(i));
  return b;
}

// Cluster-transition steps matched one-to-one (greedily, by distance) against
// true boundary steps within the tolerance.
inline ContourScore contour_score(const std::vector<int>& assign,
                                  const std::vector<int>& true_boundaries, int tolerance = 2) {
  ContourScore cs;
  cs.predicted_boundaries = transitions(assign);
  const auto& pred = cs.predicted_boundaries;
  struct Cand {
    int dist, pi, ti;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < int(pred.size()); ++i)
    for (int j = 0; j < int(true_boundaries.size()); ++j) {
      int d = std::abs(pred[size_t(i)] - true_boundaries[size_t(j)]);
      if (d <= tolerance) cands.push_back({d, i, j});
    }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.dist < b.dist; });
  std::vector<bool> pu(pred.size(), false), tu(true_boundaries.size(), false);
  int tp = 0;
  for (const auto& c : cands)
    if (!pu[size_t(c.pi)] && !tu[size_t(c.ti)]) {
      pu[size_t(c.pi)] = tu[size_t(c.ti)] = true;
      ++tp;
    }
  cs.precision = pred.empty() ? 0.0 : double(tp) / double(pred.size());
  cs.recall = true_boundaries.empty() ? 0.0 : double(tp) / double(true_boundaries.size());
  cs.f1 = (cs.precision + cs.recall) > 0
              ? 2 * cs.precision * cs.recall / (cs.precision + cs.recall)
              : 0.0;
  return cs;
}

}  // namespace gf::analysis
