#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "genfeat/analysis.hpp"

namespace ga = gf::analysis;

namespace {

ga::Matrix random_matrix(int rows, int cols, std::uint64_t seed, double sd = 1.0) {
  ga::Matrix m(rows, cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : m.v) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("pca: 1-D data captures all variance in the first component") {
  ga::Matrix x(50, 6);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> dir = {1, 2, -1, 0.5, 0, 3};
  for (int i = 0; i < 50; ++i) {
    double t = d(rng);
    for (int j = 0; j < 6; ++j) x.at(i, j) = t * dir[size_t(j)];
  }
  auto res = ga::pca(x, 3);
  CHECK(res.rank_deficient);  // rank 1 < requested 3
  CHECK(res.explained_variance[0] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("pca: components are orthonormal") {
  auto x = random_matrix(40, 10, 7);
  auto res = ga::pca(x, 8);
  for (int a = 0; a < res.components.rows; ++a)
    for (int b = 0; b < res.components.rows; ++b) {
      double dot = 0;
      for (int j = 0; j < 10; ++j) dot += res.components.at(a, j) * res.components.at(b, j);
      CHECK(dot == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-8));
    }
}

TEST_CASE("pca: explained variance is non-increasing and reconstruction closes the budget") {
  auto x = random_matrix(60, 8, 13);
  auto res = ga::pca(x, 5);
  for (size_t i = 1; i < res.explained_variance.size(); ++i)
    CHECK(res.explained_variance[i] <= res.explained_variance[i - 1] + 1e-12);

  // brute-force reconstruction oracle: residual variance == total - explained
  double resid = 0;
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < x.cols; ++j) {
      double rec = res.mean[size_t(j)];
      for (int c = 0; c < res.components.rows; ++c)
        rec += res.projections.at(i, c) * res.components.at(c, j);
      double d = x.at(i, j) - rec;
      resid += d * d;
    }
  resid /= double(x.rows);
  double explained = 0;
  for (double ev : res.eigenvalues) explained += ev;
  CHECK(resid == Catch::Approx(res.total_variance - explained).margin(1e-8));
}

TEST_CASE("pca: projecting already-projected data changes nothing") {
  auto x = random_matrix(40, 8, 21);
  auto first = ga::pca(x, 8);
  auto second = ga::pca(first.projections, 8);
  // the second pass is a rotation at most; projection magnitudes per row match
  for (int i = 0; i < x.rows; ++i) {
    double n1 = 0, n2 = 0;
    for (int c = 0; c < first.projections.cols; ++c) {
      double m1 = first.projections.at(i, c);
      n1 += m1 * m1;
    }
    for (int c = 0; c < second.projections.cols; ++c) {
      double m2 = second.projections.at(i, c);
      n2 += m2 * m2;
    }
    CHECK(n1 == Catch::Approx(n2).margin(1e-8));
  }
  // and the eigenvalue spectrum is preserved
  for (size_t c = 0; c < first.eigenvalues.size(); ++c)
    CHECK(second.eigenvalues[c] == Catch::Approx(first.eigenvalues[c]).margin(1e-8));
}

TEST_CASE("pca rejects fewer rows than components") {
  auto x = random_matrix(4, 10, 3);
  CHECK_THROWS_AS(ga::pca(x, 8), gf::Error);
}

TEST_CASE("kmeans recovers well-separated blobs up to label permutation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 0.3);
  std::vector<std::vector<double>> centers = {{0, 0}, {10, 0}, {0, 10}};
  ga::Matrix x(90, 2);
  std::vector<int> truth(90);
  for (int i = 0; i < 90; ++i) {
    int c = i / 30;
    truth[size_t(i)] = c;
    x.at(i, 0) = centers[size_t(c)][0] + d(rng);
    x.at(i, 1) = centers[size_t(c)][1] + d(rng);
  }
  auto res = ga::kmeans(x, 3, /*seed=*/42);
  // each true blob maps to exactly one cluster label
  for (int blob = 0; blob < 3; ++blob) {
    int label = res.assignments[size_t(blob * 30)];
    for (int i = blob * 30; i < (blob + 1) * 30; ++i)
      CHECK(res.assignments[size_t(i)] == label);
  }
  CHECK(ga::silhouette(x, res.assignments) > 0.8);
}

TEST_CASE("kmeans inertia is non-increasing across Lloyd iterations") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_matrix(80, 4, seed + 100);
    auto res = ga::kmeans(x, 3, seed);
    for (size_t i = 1; i < res.inertia_history.size(); ++i)
      CHECK(res.inertia_history[i] <= res.inertia_history[i - 1] + 1e-9);
  }
}

TEST_CASE("kmeans K=1 assigns all zeros with inertia = total variance") {
  auto x = random_matrix(50, 3, 9);
  auto res = ga::kmeans(x, 1, 0);
  for (int a : res.assignments) CHECK(a == 0);
  double tv = 0;
  std::vector<double> mean(3, 0.0);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 3; ++j) mean[size_t(j)] += x.at(i, j) / 50.0;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = x.at(i, j) - mean[size_t(j)];
      tv += d * d;
    }
  CHECK(res.inertia == Catch::Approx(tv).margin(1e-8));
}

TEST_CASE("kmeans on identical rows degenerates to a single cluster") {
  ga::Matrix x(20, 3);
  for (auto& v : x.v) v = 1.5;
  auto res = ga::kmeans(x, 3, 0);
  CHECK(res.degenerate);
  for (int a : res.assignments) CHECK(a == 0);
}

TEST_CASE("kmeans is deterministic given a seed") {
  auto x = random_matrix(60, 4, 33);
  auto a = ga::kmeans(x, 3, 7);
  auto b = ga::kmeans(x, 3, 7);
  CHECK(a.assignments == b.assignments);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("contour_score: piecewise-constant assignments on true segments score 1") {
  std::vector<int> assign;
  for (int i = 0; i < 20; ++i) assign.push_back(0);
  for (int i = 20; i < 40; ++i) assign.push_back(1);
  for (int i = 40; i < 64; ++i) assign.push_back(2);
  auto cs = ga::contour_score(assign, {20, 40}, 2);
  CHECK(cs.f1 == Catch::Approx(1.0));
}

TEST_CASE("contour_score: constant assignment has zero recall") {
  std::vector<int> assign(64, 0);
  auto cs = ga::contour_score(assign, {20, 40}, 2);
  CHECK(cs.recall == 0.0);
  CHECK(cs.f1 == 0.0);
}

TEST_CASE("contour scoring is invariant to cluster relabeling") {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> lab(0, 2);
  std::vector<int> assign;
  for (int i = 0; i < 64; ++i) assign.push_back(lab(rng));
  std::vector<int> relabeled;
  int perm[3] = {2, 0, 1};
  for (int a : assign) relabeled.push_back(perm[a]);
  auto c1 = ga::contour_score(assign, {10, 30, 50}, 2);
  auto c2 = ga::contour_score(relabeled, {10, 30, 50}, 2);
  CHECK(c1.f1 == Catch::Approx(c2.f1));
  CHECK(c1.predicted_boundaries == c2.predicted_boundaries);
}

TEST_CASE("contour_score: random assignments track the analytic chance level") {
  // With dense random transitions, nearly every true boundary is matched but
  // precision is roughly (#true * window) / #transitions.
  std::mt19937_64 seed_rng(2024);
  int tokens = 64, tol = 2;
  std::vector<int> truth = {12, 30, 48};
  double mean_f1 = 0;
  const int runs = 100;
  for (int r = 0; r < runs; ++r) {
    std::mt19937_64 rng(seed_rng());
    std::uniform_int_distribution<int> lab(0, 2);
    std::vector<int> assign;
    for (int i = 0; i < tokens; ++i) assign.push_back(lab(rng));
    mean_f1 += ga::contour_score(assign, truth, tol).f1;
  }
  mean_f1 /= runs;
  // Expected transitions: (T-1)*2/3; each true boundary almost surely finds a
  // transition within +-2; precision ~ 3/transitions, recall ~ 1.
  double exp_transitions = (tokens - 1) * (2.0 / 3.0);
  double p = truth.size() / exp_transitions, rec = 1.0;
  double chance = 2 * p * rec / (p + rec);
  CHECK(std::abs(mean_f1 - chance) < 0.1);
}
