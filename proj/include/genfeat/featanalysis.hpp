#pragma once

// Side-by-side structural analysis of the two feature families: per-scene
// PCA + k-means over the token sequence, cluster transitions scored against
// true event boundaries, silhouette as cluster-quality context. Emits per-scene
// cluster maps and a machine-readable summary.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/analysis.hpp"
#include "genfeat/discmodel.hpp"
#include "genfeat/features.hpp"
#include "genfeat/genmodel.hpp"
#include "genfeat/scenes.hpp"

namespace gf::featanalysis {

struct CompareConfig {
  int split = 2;          // held-out split to analyze
  int pca_k = 8;
  int kmeans_k = 3;
  int tolerance = 2;      // boundary collar, tokens
  int t_star = 10;
  std::uint64_t seed = 0;
  std::string out_dir;    // when set, cluster CSVs / report.csv / summary.json land here

  nlohmann::json to_json() const {
    return {{"split", split},         {"pca_k", pca_k},   {"kmeans_k", kmeans_k},
            {"tolerance", tolerance}, {"t_star", t_star}, {"seed", seed}};
  }
};

// True event boundaries at token rate: every onset and offset, deduplicated,
// interior only.
inline std::vector<int> token_boundaries(const scenes::SceneAnnotation& ann, int r, int tokens) {
  std::vector<int> b;
  for (const auto& e : ann.events) {
    for (int f : {e.onset, e.offset}) {
      int t = f / r;
      if (t >= 1 && t <= tokens - 1) b.push_back(t);
    }
  }
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

struct SourceReport {
  analysis::ContourScore contour;
  double silhouette = 0;
  std::vector<int> assignments;
};

// The per-scene pipeline: PCA to pca_k dims, k-means over the projected
// tokens, boundary F1 of the cluster transitions. Deterministic in
// (features, scene_seed).
inline SourceReport analyze_features(const FeatureSeq& fs, const scenes::SceneAnnotation& ann,
                                     const CompareConfig& cfg, std::uint64_t scene_seed) {
  analysis::Matrix x(fs.tokens, fs.dim);
  for (size_t i = 0; i < fs.v.size(); ++i) x.v[i] = double(fs.v[i]);
  auto p = analysis::pca(x, std::min(cfg.pca_k, fs.dim));
  auto km = analysis::kmeans(p.projections, cfg.kmeans_k, scene_seed);
  SourceReport r;
  r.assignments = km.assignments;
  r.silhouette = analysis::silhouette(p.projections, km.assignments);
  r.contour = analysis::contour_score(km.assignments,
                                      token_boundaries(ann, fs.frame_divisor, fs.tokens),
                                      cfg.tolerance);
  return r;
}

struct SceneComparison {
  int scene = 0;
  SourceReport gen, disc;
};

struct CompareResult {
  std::vector<SceneComparison> scenes;
  double gen_mean_f1 = 0, disc_mean_f1 = 0;
  double gen_mean_silhouette = 0, disc_mean_silhouette = 0;
  double gen_win_fraction = 0;  // scenes where the generative boundary F1 is strictly higher

  nlohmann::json summary(const CompareConfig& cfg) const {
    return {{"config", cfg.to_json()},
            {"scenes", scenes.size()},
            {"gen", {{"mean_contour_f1", gen_mean_f1}, {"mean_silhouette", gen_mean_silhouette}}},
            {"disc",
             {{"mean_contour_f1", disc_mean_f1}, {"mean_silhouette", disc_mean_silhouette}}},
            {"gen_win_fraction", gen_win_fraction}};
  }
};

// Runs the analysis over a held-out split for both extractors. Pure read of
// both models; artifacts are written only when cfg.out_dir is set.
inline CompareResult compare_sources(const gen::Vae<float>& vae, const gen::Denoiser<float>& den,
                                     const disc::Encoder<float>& enc, const scenes::Dataset& ds,
                                     const CompareConfig& cfg) {
  auto idxs = ds.indices_of_split(cfg.split);
  if (idxs.empty()) throw Error(ErrorCode::config, "compare_sources: empty split");
  namespace fs = std::filesystem;
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  CompareResult res;
  std::ofstream report;
  if (!cfg.out_dir.empty()) {
    report.open(cfg.out_dir + "/report.csv");
    report << "scene,source,contour_f1,silhouette\n";
    report.precision(17);
  }
  for (int idx : idxs) {
    gen::GenFeatureConfig gc;
    gc.t_star = cfg.t_star;
    gc.seed = cfg.seed * 1000003 + std::uint64_t(idx);
    auto gen_fs = gen::extract_generative_features(vae, den, ds.specs[size_t(idx)], gc);
    auto disc_fs = enc.encode(ds.specs[size_t(idx)]);

    SceneComparison sc;
    sc.scene = idx;
    sc.gen = analyze_features(gen_fs, ds.ann[size_t(idx)], cfg, gc.seed);
    sc.disc = analyze_features(disc_fs, ds.ann[size_t(idx)], cfg, gc.seed);

    res.gen_mean_f1 += sc.gen.contour.f1;
    res.disc_mean_f1 += sc.disc.contour.f1;
    res.gen_mean_silhouette += sc.gen.silhouette;
    res.disc_mean_silhouette += sc.disc.silhouette;
    if (sc.gen.contour.f1 > sc.disc.contour.f1) res.gen_win_fraction += 1;

    if (!cfg.out_dir.empty()) {
      std::ofstream cs(cfg.out_dir + "/" + std::to_string(idx) + ".clusters.csv");
      cs << "t,gen_cluster,disc_cluster\n";
      for (size_t t = 0; t < sc.gen.assignments.size(); ++t)
        cs << t << "," << sc.gen.assignments[t] << "," << sc.disc.assignments[t] << "\n";
      if (!cs) throw Error(ErrorCode::io, "failed writing cluster map for scene " +
                                              std::to_string(idx));
      report << idx << ",gen," << sc.gen.contour.f1 << "," << sc.gen.silhouette << "\n";
      report << idx << ",disc," << sc.disc.contour.f1 << "," << sc.disc.silhouette << "\n";
    }
    res.scenes.push_back(std::move(sc));
  }
  double n = double(res.scenes.size());
  res.gen_mean_f1 /= n;
  res.disc_mean_f1 /= n;
  res.gen_mean_silhouette /= n;
  res.disc_mean_silhouette /= n;
  res.gen_win_fraction /= n;

  if (!cfg.out_dir.empty()) {
    if (!report) throw Error(ErrorCode::io, "failed writing report.csv");
    std::ofstream js(cfg.out_dir + "/summary.json");
    js << res.summary(cfg).dump(1) << "\n";
    if (!js) throw Error(ErrorCode::io, "failed writing summary.json");
  }
  return res;
}

}  // namespace gf::featanalysis
