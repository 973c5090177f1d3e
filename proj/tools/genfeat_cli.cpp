// Experiment driver: dataset generation, model training, feature extraction,
// task fine-tuning across fusion variants, evaluation, analysis and report
// consolidation. All state lives under one output root; every run directory
// stores its resolved config, history, best checkpoint, metrics and manifest.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <json.hpp>

#include "genfeat/featanalysis.hpp"
#include "genfeat/tasks.hpp"

namespace fs = std::filesystem;
namespace gd = gf::disc;
namespace gg = gf::gen;
namespace gs = gf::scenes;
namespace gt = gf::tasks;
namespace gfu = gf::fusion;
namespace fa = gf::featanalysis;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "genfeat 0.1.0";

// ---- configuration ----------------------------------------------------------

json default_config() {
  json c;
  c["seed"] = 1234;
  c["out"] = "out";
  c["dataset"] = gs::DatasetConfig().to_json();
  c["vae"] = gg::VaeConfig().to_json();
  c["denoiser"] = gg::DenoiserConfig().to_json();
  c["encoder"] = gd::EncoderConfig().to_json();
  c["gen_features"] = {{"t_star", 10}, {"source", "denoised_latent"}};
  c["fusion"] = {{"dim", 64}, {"heads", 4}, {"gen_queries", false}};
  c["train"] = {{"vae_epochs", 6},     {"denoiser_epochs", 10}, {"encoder_epochs", 12},
                {"lr", 1e-3},          {"task_epochs", 30},     {"finetune_epochs", 12}};
  c["schedule"] = {{"caption_base", 1e-4}, {"tag_base", 1e-3}};
  c["task"] = {{"beam_width", 3},
               {"caption",
                {{"dim", 64}, {"heads", 4}, {"depth", 2}, {"max_len", 20},
                 {"label_smoothing", 0.1}}}};
  c["analysis"] = {{"split", 2}, {"pca_k", 8}, {"kmeans_k", 3}, {"tolerance", 2}, {"seed", 0}};
  c["report"] = {{"seeds", {1, 2, 3}}};
  return c;
}

// Dotted key=value override against the defaults tree; unknown keys rejected.
void apply_override(json& cfg, const std::string& key, const std::string& value) {
  json* node = &cfg;
  size_t pos = 0;
  std::string path;
  while (true) {
    size_t dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!node->is_object() || !node->contains(part))
      throw gf::Error(gf::ErrorCode::config, "unknown config key: " + key);
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object())
    throw gf::Error(gf::ErrorCode::config, "config key names a section, not a value: " + key);
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded() || parsed.is_object())
    parsed = value;  // plain string
  if (node->type() != parsed.type()) {
    // allow int literals for float fields and vice versa
    if (node->is_number() && parsed.is_number()) {
      if (node->is_number_float())
        parsed = parsed.get<double>();
      else
        parsed = parsed.get<long long>();
    } else {
      throw gf::Error(gf::ErrorCode::config, "config key " + key + " expects a " +
                                                 std::string(node->type_name()) + ", got '" +
                                                 value + "'");
    }
  }
  *node = parsed;
}

void apply_config_file(json& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw gf::Error(gf::ErrorCode::config, "config file not found: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw gf::Error(gf::ErrorCode::config,
                      path + ":" + std::to_string(lineno) + ": expected key=value");
    auto strip = [](std::string s) {
      auto a = s.find_first_not_of(" \t");
      auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_override(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

std::string config_hash(const json& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                (unsigned long long)gs::fnv1a(cfg.dump()));
  return buf;
}

std::uint64_t stage_seed(const json& cfg, const std::string& stage) {
  return gs::splitmix64(std::uint64_t(cfg.at("seed").get<long long>()) ^ gs::fnv1a(stage));
}

// ---- context & artifact paths ----------------------------------------------

struct Ctx {
  json cfg;
  std::string out;

  std::string data_dir() const { return out + "/data"; }
  std::string model_path(const std::string& name) const {
    return out + "/models/" + name + ".ckpt";
  }
  std::string run_dir(const std::string& task, const std::string& fusion,
                      std::uint64_t seed) const {
    return out + "/runs/" + task + "_" + fusion + "_s" + std::to_string(seed);
  }
};

gs::Dataset load_data(const Ctx& c) {
  try {
    return gs::load_dataset(c.data_dir());
  } catch (const gf::Error& e) {
    if (e.code == gf::ErrorCode::missing_dependency)
      throw gf::Error(gf::ErrorCode::missing_dependency,
                      std::string(e.what()) + " (run `data gen` first)");
    throw;
  }
}

template <class Loader>
auto load_model(Loader loader, const std::string& path, const char* stage) {
  try {
    return loader(path);
  } catch (const gf::Error& e) {
    if (e.code == gf::ErrorCode::missing_dependency)
      throw gf::Error(gf::ErrorCode::missing_dependency,
                      std::string(e.what()) + " (run `train " + stage + "` first)");
    throw;
  }
}

void write_json_atomic(const std::string& path, const json& j) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp);
    os << j.dump(1) << "\n";
    if (!os) throw gf::Error(gf::ErrorCode::io, "failed writing " + tmp);
  }
  fs::rename(tmp, path);
}

struct Manifest {
  Ctx* c;
  std::string dir;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::vector<std::string> artifacts;

  void finish(std::uint64_t seed) const {
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json_atomic(dir + "/manifest.json", {{"config_hash", config_hash(c->cfg)},
                                               {"version", kVersion},
                                               {"seed", seed},
                                               {"wall_clock_s", wall},
                                               {"artifacts", artifacts}});
  }
};

// ---- model assembly ---------------------------------------------------------

gs::DatasetConfig dataset_config(const Ctx& c) {
  return gs::DatasetConfig::from_json(c.cfg.at("dataset"));
}

int gen_feature_dim(const Ctx& c) {
  std::string src = c.cfg.at("gen_features").at("source");
  return src == "final_hidden" ? c.cfg.at("denoiser").at("dim").get<int>()
                               : c.cfg.at("vae").at("d_lat").get<int>();
}

gfu::FusionConfig fusion_config(const Ctx& c, gfu::Strategy s) {
  gfu::FusionConfig fc;
  fc.strategy = s;
  fc.dim = c.cfg.at("fusion").at("dim");
  fc.heads = c.cfg.at("fusion").at("heads");
  fc.gen_queries = c.cfg.at("fusion").at("gen_queries");
  fc.d_gen = gen_feature_dim(c);
  return fc;
}

// Extraction seeds derive from the global seed only, so every run over the
// same artifacts sees identical generative features.
gt::GenFeats extract_gen_features(const Ctx& c, const gs::Dataset& ds) {
  auto vae = load_model(gg::load_vae, c.model_path("vae"), "vae");
  auto den = load_model(gg::load_denoiser, c.model_path("denoiser"), "denoiser");
  gg::GenFeatureConfig fc;
  fc.t_star = c.cfg.at("gen_features").at("t_star");
  fc.source = gg::feature_source_from(c.cfg.at("gen_features").at("source"));
  gt::GenFeats feats;
  std::uint64_t base = stage_seed(c.cfg, "gen_features");
  for (size_t i = 0; i < ds.specs.size(); ++i) {
    fc.seed = gs::splitmix64(base ^ (0x9e3779b97f4a7c15ull * (i + 1)));
    feats.push_back(gg::extract_generative_features(vae, den, ds.specs[i], fc));
  }
  return feats;
}

gt::CaptionConfig caption_config(const Ctx& c) {
  json j = c.cfg.at("task").at("caption");
  j["vocab"] = gs::Vocabulary::instance().size();
  return gt::CaptionConfig::from_json(j);
}

// ---- metrics emission -------------------------------------------------------

json metric_entry(const gf::metrics::MetricResult& r, json config) {
  return {{"corpus", r.corpus}, {"per_item", r.per_item}, {"config", std::move(config)}};
}

json caption_metrics(const gt::CaptionModel<float>& m, const gs::Dataset& ds,
                     const gt::GenFeats* gen, int split, int beam) {
  auto in = gt::caption_eval_input(m, ds, gen, split, beam);
  json out;
  out["bleu_1"] = metric_entry(gf::metrics::bleu_n(in, 1), {{"n", 1}});
  out["bleu_4"] = metric_entry(gf::metrics::bleu_n(in, 4), {{"n", 4}});
  out["rouge_l"] = metric_entry(gf::metrics::rouge_l(in), {{"beta", 1.2}});
  out["meteor_lite"] = metric_entry(gf::metrics::meteor_lite(in), json::object());
  out["cider_d"] = metric_entry(gf::metrics::cider_d(in), {{"sigma", 6.0}});
  out["spice"] = "not_computed";
  out["spider"] = "not_computed";
  out["primary"] = "cider_d";
  return out;
}

json sed_metrics(const gt::SedModel<float>& m, const gs::Dataset& ds, const gt::GenFeats* gen,
                 int split) {
  gf::Tape<float> t;
  t.recording = false;
  gf::metrics::MetricResult r;
  for (int idx : ds.indices_of_split(split)) {
    auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
    std::vector<std::vector<double>> probs(size_t(logits.rows()),
                                           std::vector<double>(size_t(logits.cols())));
    for (int i = 0; i < logits.rows(); ++i)
      for (int j = 0; j < logits.cols(); ++j)
        probs[size_t(i)][size_t(j)] =
            1.0 / (1.0 + std::exp(-double((*logits.data)[size_t(i) * logits.cols() + j])));
    auto pred = gt::sed_postprocess(probs, m.backbone.enc.cfg.r);
    std::vector<gf::metrics::Event> truth;
    for (const auto& e : ds.ann[size_t(idx)].events)
      truth.push_back({e.class_id, e.onset, e.offset});
    r.per_item.push_back(gf::metrics::event_f1(pred, truth).macro_f1);
    r.corpus += r.per_item.back();
  }
  if (!r.per_item.empty()) r.corpus /= double(r.per_item.size());
  json out;
  out["event_f1"] = metric_entry(r, {{"collar", 2}, {"threshold", 0.5}, {"median_w", 3}});
  out["primary"] = "event_f1";
  return out;
}

json at_metrics(const gt::TagModel<float>& m, const gs::Dataset& ds, const gt::GenFeats* gen,
                int split) {
  gf::Tape<float> t;
  t.recording = false;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (int idx : ds.indices_of_split(split)) {
    auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
    std::vector<double> s;
    for (float v : *logits.data) s.push_back(double(v));
    scores.push_back(std::move(s));
    labels.push_back(ds.ann[size_t(idx)].tags);
  }
  auto r = gf::metrics::mean_average_precision(scores, labels);
  json out;
  out["map"] = {{"corpus", r.map},
                {"per_item", r.per_class_ap},
                {"config", {{"skipped_classes", r.skipped_classes}}}};
  out["primary"] = "map";
  return out;
}

// ---- subcommands ------------------------------------------------------------

int cmd_data_gen(Ctx& c) {
  auto ds = gs::generate_dataset(dataset_config(c));
  gs::save_dataset(ds, c.data_dir());
  std::cout << "wrote " << ds.specs.size() << " scenes to " << c.data_dir() << "\n";
  return 0;
}

int cmd_train_vae(Ctx& c) {
  auto ds = load_data(c);
  gg::VaeConfig vc = gg::VaeConfig::from_json(c.cfg.at("vae"));
  vc.frames = ds.config.frames;
  vc.bins = ds.config.bins;
  std::mt19937_64 rng(stage_seed(c.cfg, "vae_init"));
  gg::Vae<float> vae(vc, rng);
  auto r = gg::train_vae(vae, ds, c.cfg.at("train").at("vae_epochs"),
                         float(c.cfg.at("train").at("lr").get<double>()),
                         stage_seed(c.cfg, "vae_train"));
  fs::create_directories(c.out + "/models");
  gg::save_vae(c.model_path("vae"), vae);
  std::cout << "vae recon mse " << r.final_recon_mse << " (mean baseline " << r.mean_baseline_mse
            << ") -> " << c.model_path("vae") << "\n";
  return 0;
}

int cmd_train_denoiser(Ctx& c) {
  auto ds = load_data(c);
  auto vae = load_model(gg::load_vae, c.model_path("vae"), "vae");
  gg::DenoiserConfig dc = gg::DenoiserConfig::from_json(c.cfg.at("denoiser"));
  dc.d_lat = vae.cfg.d_lat;
  std::mt19937_64 rng(stage_seed(c.cfg, "denoiser_init"));
  gg::Denoiser<float> den(dc, rng);
  auto r = gg::train_denoiser(den, vae, ds, c.cfg.at("train").at("denoiser_epochs"),
                              float(c.cfg.at("train").at("lr").get<double>()),
                              stage_seed(c.cfg, "denoiser_train"));
  fs::create_directories(c.out + "/models");
  gg::save_denoiser(c.model_path("denoiser"), den);
  std::cout << "denoiser eps mse " << r.final_loss << " -> " << c.model_path("denoiser") << "\n";
  return 0;
}

int cmd_train_encoder(Ctx& c) {
  auto ds = load_data(c);
  gd::EncoderConfig ec = gd::EncoderConfig::from_json(c.cfg.at("encoder"));
  ec.frames = ds.config.frames;
  ec.bins = ds.config.bins;
  std::mt19937_64 rng(stage_seed(c.cfg, "encoder_init"));
  gd::Encoder<float> enc(ec, rng);
  auto r = gd::pretrain_tagging(enc, ds, c.cfg.at("train").at("encoder_epochs"),
                                float(c.cfg.at("train").at("lr").get<double>()),
                                stage_seed(c.cfg, "encoder_train"));
  fs::create_directories(c.out + "/models");
  gd::save_encoder(c.model_path("encoder"), enc);
  std::cout << "encoder val mAP " << r.val_map << " -> " << c.model_path("encoder") << "\n";
  return 0;
}

int cmd_extract(Ctx& c, const std::string& source) {
  auto ds = load_data(c);
  std::string dir = c.out + "/features/" + source;
  fs::create_directories(dir);
  if (source == "gen") {
    auto feats = extract_gen_features(c, ds);
    for (size_t i = 0; i < feats.size(); ++i)
      gf::save_feature_seq(feats[i], dir + "/scene_" + std::to_string(i));
  } else if (source == "disc") {
    auto enc = load_model(gd::load_encoder, c.model_path("encoder"), "encoder");
    for (size_t i = 0; i < ds.specs.size(); ++i)
      gf::save_feature_seq(enc.encode(ds.specs[i]), dir + "/scene_" + std::to_string(i));
  } else {
    throw gf::Error(gf::ErrorCode::config, "unknown feature source: " + source);
  }
  std::cout << "wrote " << ds.specs.size() << " feature files to " << dir << "\n";
  return 0;
}

// One (task, fusion, seed) cell: baseline trains the head on the pretrained
// encoder; fusion variants fine-tune from the baseline run's checkpoint with a
// freshly-initialized zero-gate fusion block.
int cmd_train_task(Ctx& c, const std::string& task, const std::string& fusion_name,
                   std::uint64_t seed) {
  auto ds = load_data(c);
  auto strategy = gfu::strategy_from(fusion_name);
  auto fc = fusion_config(c, strategy);
  bool fused = strategy != gfu::Strategy::none;

  gt::GenFeats gen;
  if (fused) gen = extract_gen_features(c, ds);

  std::string dir = c.run_dir(task, fusion_name, seed);
  fs::create_directories(dir);
  Manifest man{&c, dir};
  write_json_atomic(dir + "/config.json", c.cfg);

  gt::TrainOptions opts;
  opts.seed = gs::splitmix64(seed ^ gs::fnv1a(task + "_" + fusion_name));
  opts.epochs = fused ? c.cfg.at("train").at("finetune_epochs").get<int>()
                      : c.cfg.at("train").at("task_epochs").get<int>();
  opts.run_dir = dir;
  opts.schedule =
      task == "caption"
          ? gt::TrainSchedule{gt::ScheduleKind::caption_warmup,
                              c.cfg.at("schedule").at("caption_base").get<double>()}
          : gt::TrainSchedule{gt::ScheduleKind::tag_scaled,
                              c.cfg.at("schedule").at("tag_base").get<double>()};

  std::string baseline_ckpt = c.run_dir(task, "none", seed) + "/model.ckpt";
  std::mt19937_64 rng(gs::splitmix64(seed ^ gs::fnv1a(task + "_head")));

  auto make_backbone = [&](gd::Encoder<float> enc) {
    return gfu::FusedEncoder<float>(std::move(enc), fc, rng);
  };

  json metrics;
  gt::TrainHistory hist;
  long params = 0;
  int test_split = 2, beam = c.cfg.at("task").at("beam_width");
  if (task == "caption") {
    gt::CaptionModel<float> m;
    if (fused) {
      auto base = load_model([](const std::string& p) { return gt::load_caption_model(p); },
                             baseline_ckpt, "task (baseline first)");
      m.backbone = make_backbone(base.backbone.enc);
      m.head = base.head;
    } else {
      m.backbone = make_backbone(load_model(gd::load_encoder, c.model_path("encoder"), "encoder"));
      m.head = gt::CaptionHead<float>(caption_config(c), rng);
    }
    hist = gt::train_caption(m, ds, fused ? &gen : nullptr, opts);
    params = gfu::count_trainable_params(m.backbone) + [&] {
      gf::ParamRegistry<float> r;
      m.head.reg(r);
      return r.count();
    }();
    gt::save_task_model(dir + "/model.ckpt", m, m.head.cfg.to_json());
    metrics = caption_metrics(m, ds, fused ? &gen : nullptr, test_split, beam);
  } else if (task == "sed" || task == "at") {
    auto assemble = [&](auto& m, auto make_head, auto load_fn) {
      if (fused) {
        auto base = load_model(load_fn, baseline_ckpt, "task (baseline first)");
        m.backbone = make_backbone(base.backbone.enc);
        m.head = base.head;
      } else {
        m.backbone =
            make_backbone(load_model(gd::load_encoder, c.model_path("encoder"), "encoder"));
        m.head = make_head();
      }
    };
    if (task == "sed") {
      gt::SedModel<float> m;
      assemble(
          m,
          [&] { return gt::SedHead<float>(fc.dim, gs::kNumClasses, rng); },
          [](const std::string& p) { return gt::load_sed_model(p); });
      hist = gt::train_sed(m, ds, fused ? &gen : nullptr, opts);
      params = gfu::count_trainable_params(m.backbone) + [&] {
        gf::ParamRegistry<float> r;
        m.head.reg(r);
        return r.count();
      }();
      gt::save_task_model(dir + "/model.ckpt", m, json::object());
      metrics = sed_metrics(m, ds, fused ? &gen : nullptr, test_split);
    } else {
      gt::TagModel<float> m;
      assemble(
          m,
          [&] { return gt::TagHead<float>(fc.dim, gs::kNumClasses, rng); },
          [](const std::string& p) { return gt::load_tag_model(p); });
      hist = gt::train_at(m, ds, fused ? &gen : nullptr, opts);
      params = gfu::count_trainable_params(m.backbone) + [&] {
        gf::ParamRegistry<float> r;
        m.head.reg(r);
        return r.count();
      }();
      gt::save_task_model(dir + "/model.ckpt", m, json::object());
      metrics = at_metrics(m, ds, fused ? &gen : nullptr, test_split);
    }
  } else {
    throw gf::Error(gf::ErrorCode::config, "unknown task: " + task);
  }

  metrics["task"] = task;
  metrics["fusion"] = fusion_name;
  metrics["seed"] = seed;
  metrics["trainable_params"] = params;
  metrics["best_val"] = hist.best_val;
  metrics["best_epoch"] = hist.best_epoch;
  write_json_atomic(dir + "/metrics.json", metrics);

  man.artifacts = {dir + "/config.json", dir + "/history.csv", dir + "/model.ckpt",
                   dir + "/metrics.json"};
  man.finish(seed);
  std::cout << task << "/" << fusion_name << " seed " << seed << ": best val " << hist.best_val
            << " (epoch " << hist.best_epoch << "), test "
            << metrics.at(metrics.at("primary").get<std::string>()).at("corpus") << "\n";
  return 0;
}

// Recomputes metrics.json for an existing run directory from its checkpoint.
int cmd_eval(Ctx& c, const std::string& dir) {
  auto ck = gf::load_checkpoint(dir + "/model.ckpt");
  std::string task = ck.config.value("kind", "");
  auto ds = load_data(c);
  auto fc = gfu::FusionConfig::from_json(ck.config.at("fusion"));
  bool fused = fc.strategy != gfu::Strategy::none;
  gt::GenFeats gen;
  if (fused) gen = extract_gen_features(c, ds);
  int beam = c.cfg.at("task").at("beam_width");

  json metrics, old;
  {
    std::ifstream is(dir + "/metrics.json");
    if (is) is >> old;
  }
  if (task == "caption") {
    auto m = gt::load_caption_model(dir + "/model.ckpt");
    metrics = caption_metrics(m, ds, fused ? &gen : nullptr, 2, beam);
  } else if (task == "sed") {
    auto m = gt::load_sed_model(dir + "/model.ckpt");
    metrics = sed_metrics(m, ds, fused ? &gen : nullptr, 2);
  } else if (task == "at") {
    auto m = gt::load_tag_model(dir + "/model.ckpt");
    metrics = at_metrics(m, ds, fused ? &gen : nullptr, 2);
  } else {
    throw gf::Error(gf::ErrorCode::config, "unrecognized checkpoint kind in " + dir);
  }
  for (auto key : {"task", "fusion", "seed", "trainable_params", "best_val", "best_epoch"})
    if (old.contains(key)) metrics[key] = old.at(key);
  write_json_atomic(dir + "/metrics.json", metrics);
  std::cout << "rewrote " << dir << "/metrics.json\n";
  return 0;
}

int cmd_analyze(Ctx& c) {
  auto ds = load_data(c);
  auto vae = load_model(gg::load_vae, c.model_path("vae"), "vae");
  auto den = load_model(gg::load_denoiser, c.model_path("denoiser"), "denoiser");
  auto enc = load_model(gd::load_encoder, c.model_path("encoder"), "encoder");
  fa::CompareConfig cc;
  const auto& a = c.cfg.at("analysis");
  cc.split = a.at("split");
  cc.pca_k = a.at("pca_k");
  cc.kmeans_k = a.at("kmeans_k");
  cc.tolerance = a.at("tolerance");
  cc.seed = std::uint64_t(a.at("seed").get<long long>());
  cc.t_star = c.cfg.at("gen_features").at("t_star");
  cc.out_dir = c.out + "/analysis";
  auto r = fa::compare_sources(vae, den, enc, ds, cc);
  std::cout << "contour F1 gen " << r.gen_mean_f1 << " vs disc " << r.disc_mean_f1
            << " (gen wins on " << r.gen_win_fraction * 100 << "% of scenes) -> " << cc.out_dir
            << "\n";
  return 0;
}

// Consolidates every run's metrics.json into one CSV row per (task, fusion,
// seed, metric).
int cmd_report(Ctx& c) {
  std::string runs = c.out + "/runs";
  if (!fs::exists(runs))
    throw gf::Error(gf::ErrorCode::missing_dependency, "no runs directory under " + c.out);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs))
    if (e.is_directory() && fs::exists(e.path() / "metrics.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw gf::Error(gf::ErrorCode::missing_dependency, "no completed runs under " + runs);

  std::ofstream os(c.out + "/report.csv");
  os << "task,fusion,seed,metric,value,trainable_params\n";
  os.precision(17);
  for (const auto& d : dirs) {
    json m;
    std::ifstream is(d / "metrics.json");
    is >> m;
    for (auto& [key, val] : m.items())
      if (val.is_object() && val.contains("corpus"))
        os << m.at("task").get<std::string>() << "," << m.at("fusion").get<std::string>() << ","
           << m.at("seed") << "," << key << "," << val.at("corpus").get<double>() << ","
           << m.at("trainable_params") << "\n";
  }
  if (!os) throw gf::Error(gf::ErrorCode::io, "failed writing report.csv");
  std::cout << "wrote " << c.out << "/report.csv (" << dirs.size() << " runs)\n";
  return 0;
}

// Full experiment grid: every fusion variant on every task across the
// configured seeds, then the consolidated report.
int cmd_reproduce(Ctx& c) {
  auto seeds = c.cfg.at("report").at("seeds").get<std::vector<std::uint64_t>>();
  for (const std::string task : {"caption", "sed", "at"})
    for (std::uint64_t seed : seeds)
      for (const std::string fusionv : {"none", "replace", "early", "mid"})
        cmd_train_task(c, task, fusionv, seed);
  return cmd_report(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectrogram-scene feature fusion experiments"};
  app.require_subcommand(1);

  std::vector<std::string> config_files, overrides;
  app.add_option("--config", config_files, "key=value config file(s), applied in order");
  app.add_option("--set", overrides, "dotted config override, e.g. dataset.num_scenes=500");
  std::string out_flag;
  app.add_option("--out", out_flag, "output root (overrides config/env)");

  auto* data = app.add_subcommand("data", "dataset commands");
  auto* data_gen = data->add_subcommand("gen", "generate and save the dataset");

  auto* train = app.add_subcommand("train", "training commands");
  auto* train_vae = train->add_subcommand("vae", "train the latent autoencoder");
  auto* train_den = train->add_subcommand("denoiser", "train the latent denoiser");
  auto* train_enc = train->add_subcommand("encoder", "pretrain the tagging encoder");
  auto* train_task = train->add_subcommand("task", "train or fine-tune a downstream task");
  std::string task = "caption", fusionv = "none";
  std::uint64_t seed = 1;
  train_task->add_option("--task", task)->check(CLI::IsMember({"caption", "sed", "at"}));
  train_task->add_option("--fusion", fusionv)
      ->check(CLI::IsMember({"none", "replace", "early", "mid"}));
  train_task->add_option("--seed", seed, "run seed");

  auto* extract = app.add_subcommand("extract", "artifact extraction");
  auto* extract_feat = extract->add_subcommand("features", "write per-scene feature files");
  std::string source = "gen";
  extract_feat->add_option("--source", source)->check(CLI::IsMember({"gen", "disc"}));

  auto* eval = app.add_subcommand("eval", "recompute a run's metrics.json");
  std::string run_dir;
  eval->add_option("--run", run_dir, "run directory")->required();

  auto* analyze = app.add_subcommand("analyze", "feature analysis");
  auto* analyze_cmp = analyze->add_subcommand("compare", "PCA/k-means comparison of both sources");

  auto* report = app.add_subcommand("report", "consolidate run metrics into report.csv");
  auto* reproduce = app.add_subcommand("reproduce", "run the full fusion-by-task grid");

  // global options may appear after a subcommand
  std::function<void(CLI::App*)> fall = [&](CLI::App* a) {
    for (auto* s : a->get_subcommands(nullptr)) {
      s->fallthrough();
      fall(s);
    }
  };
  fall(&app);

  CLI11_PARSE(app, argc, argv);

  try {
    Ctx c;
    c.cfg = default_config();
    for (const auto& f : config_files) apply_config_file(c.cfg, f);
    for (const auto& o : overrides) {
      auto eq = o.find('=');
      if (eq == std::string::npos)
        throw gf::Error(gf::ErrorCode::config, "--set expects key=value, got: " + o);
      apply_override(c.cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    if (const char* env = std::getenv("GENFEAT_OUT"); env && *env)
      c.cfg["out"] = std::string(env);
    if (!out_flag.empty()) c.cfg["out"] = out_flag;
    c.out = c.cfg.at("out");

    if (data_gen->parsed()) return cmd_data_gen(c);
    if (train_vae->parsed()) return cmd_train_vae(c);
    if (train_den->parsed()) return cmd_train_denoiser(c);
    if (train_enc->parsed()) return cmd_train_encoder(c);
    if (train_task->parsed()) return cmd_train_task(c, task, fusionv, seed);
    if (extract_feat->parsed()) return cmd_extract(c, source);
    if (eval->parsed()) return cmd_eval(c, run_dir);
    if (analyze_cmp->parsed()) return cmd_analyze(c);
    if (report->parsed()) return cmd_report(c);
    if (reproduce->parsed()) return cmd_reproduce(c);
    std::cerr << "missing subcommand\n";
    return 1;
  } catch (const gf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code) {
      case gf::ErrorCode::numeric: return 2;
      case gf::ErrorCode::missing_dependency: return 3;
      default: return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
