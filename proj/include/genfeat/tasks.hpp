#pragma once

// Downstream heads and training loops over the fused backbone: captioning
// (token decoder), sound event detection (per-token classes) and audio tagging
// (clip-level classes), plus the learning-rate schedules and the run-directory
// bookkeeping shared by all three.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/checkpoint.hpp"
#include "genfeat/discmodel.hpp"
#include "genfeat/fusion.hpp"
#include "genfeat/metrics.hpp"
#include "genfeat/nn.hpp"
#include "genfeat/scenes.hpp"
#include "genfeat/tensor.hpp"

namespace gf::tasks {

// ---- learning-rate schedules ------------------------------------------------

enum class ScheduleKind { caption_warmup, tag_scaled };

inline std::string schedule_name(ScheduleKind k) {
  return k == ScheduleKind::caption_warmup ? "caption_warmup" : "tag_scaled";
}

struct TrainSchedule {
  ScheduleKind kind = ScheduleKind::caption_warmup;
  double base = 1e-4;  // tag_scaled conventionally uses 1e-3
};

// Pure function of the epoch index. caption_warmup ramps linearly to base over
// 5 epochs, then decays x0.1 every 10. tag_scaled scales base by 0.05/0.1/0.2
// over the first 3 epochs, then halves the 0.2 scale every 10 epochs with a
// floor at 0.05.
inline double lr_at_epoch(const TrainSchedule& s, int e) {
  if (e < 0) throw Error(ErrorCode::config, "lr_at_epoch: negative epoch");
  if (s.kind == ScheduleKind::caption_warmup) {
    if (e < 5) return s.base * double(e + 1) / 5.0;
    return s.base * std::pow(0.1, double((e - 5) / 10));
  }
  static const double warm[3] = {0.05, 0.1, 0.2};
  if (e < 3) return s.base * warm[e];
  return s.base * std::max(0.05, 0.2 * std::pow(0.5, double((e - 3) / 10)));
}

// ---- captioning head --------------------------------------------------------

struct CaptionConfig {
  int vocab = 0;  // defaults to the scene grammar's vocabulary
  int dim = 64, heads = 4, depth = 2;
  int max_len = 20;
  double label_smoothing = 0.1;

  nlohmann::json to_json() const {
    return {{"vocab", vocab},     {"dim", dim},
            {"heads", heads},     {"depth", depth},
            {"max_len", max_len}, {"label_smoothing", label_smoothing}};
  }
  static CaptionConfig from_json(const nlohmann::json& j) {
    CaptionConfig c;
    c.vocab = j.at("vocab");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.depth = j.at("depth");
    c.max_len = j.at("max_len");
    c.label_smoothing = j.at("label_smoothing");
    return c;
  }
};

template <class Real>
struct CaptionHead {
  CaptionConfig cfg;
  Tensor<Real> tok_table;  // [V, dim]
  std::vector<DecoderBlock<Real>> blocks;
  LayerNorm<Real> ln_f;
  Linear<Real> out;  // dim -> V

  CaptionHead() = default;
  CaptionHead(const CaptionConfig& c, std::mt19937_64& rng)
      : cfg(c), ln_f(c.dim), out(c.dim, c.vocab, rng) {
    if (c.vocab < 4) throw Error(ErrorCode::config, "caption head: vocabulary too small");
    tok_table = randn<Real>({c.vocab, c.dim}, rng, Real(1.0 / std::sqrt(double(c.dim))));
    for (int i = 0; i < c.depth; ++i) blocks.emplace_back(c.dim, c.heads, rng);
  }
  void reg(ParamRegistry<Real>& r, const std::string& prefix = "cap") {
    r.add(prefix + ".tok", &tok_table);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].reg(r, prefix + ".b" + std::to_string(i));
    ln_f.reg(r, prefix + ".lnf");
    out.reg(r, prefix + ".out");
  }

  // [len, V] next-token logits for a teacher-forced prefix
  Tensor<Real> logits(Tape<Real>& t, const std::vector<int>& ids, const Tensor<Real>& memory) const {
    if (ids.empty()) throw Error(ErrorCode::shape, "caption head: empty input sequence");
    auto h = t.embedding(tok_table, ids);
    h = t.add(h, sinusoidal_positions<Real>(int(ids.size()), cfg.dim));
    for (const auto& b : blocks) h = b.forward(t, h, memory);
    return out.forward(t, ln_f.forward(t, h));
  }
};

// Label-smoothed cross entropy over a gold token sequence (BOS prepended,
// EOS appended internally).
template <class Real>
Tensor<Real> caption_loss(Tape<Real>& t, const CaptionHead<Real>& head, const Tensor<Real>& memory,
                          const std::vector<int>& gold) {
  std::vector<int> input{scenes::Vocabulary::kBos}, target = gold;
  input.insert(input.end(), gold.begin(), gold.end());
  target.push_back(scenes::Vocabulary::kEos);

  auto lp = t.log_(t.softmax(head.logits(t, input, memory)));
  int L = int(target.size()), V = head.cfg.vocab;
  double s = head.cfg.label_smoothing;
  auto q = Tensor<Real>::full({L, V}, Real(s / double(V)));
  for (int i = 0; i < L; ++i) (*q.data)[size_t(i) * V + target[size_t(i)]] += Real(1.0 - s);
  return t.scale(t.sum(t.mul(q, lp)), Real(-1.0 / double(L)));
}

namespace detail {
// double-precision log-softmax of one logit row, for decoding
template <class Real>
std::vector<double> log_softmax_row(const Tensor<Real>& logits, int row) {
  int V = logits.cols();
  std::vector<double> lp(size_t(V), 0.0);
  double mx = -1e300;
  for (int j = 0; j < V; ++j) mx = std::max(mx, double((*logits.data)[size_t(row) * V + j]));
  double z = 0;
  for (int j = 0; j < V; ++j) z += std::exp(double((*logits.data)[size_t(row) * V + j]) - mx);
  for (int j = 0; j < V; ++j)
    lp[size_t(j)] = double((*logits.data)[size_t(row) * V + j]) - mx - std::log(z);
  return lp;
}
}  // namespace detail

// Beam search over next-token log-probabilities; width 1 reduces to greedy.
// Returns the generated ids without BOS/EOS.
template <class Real>
std::vector<int> decode_caption(const CaptionHead<Real>& head, const Tensor<Real>& memory,
                                int beam_width = 3) {
  if (beam_width < 1) throw Error(ErrorCode::config, "decode: beam width must be >= 1");
  struct Cand {
    std::vector<int> ids;  // starts with BOS
    double logp = 0;
    bool done = false;
  };
  Tape<Real> t;
  t.recording = false;
  std::vector<Cand> beams{{{scenes::Vocabulary::kBos}, 0.0, false}};
  for (int step = 0; step < head.cfg.max_len; ++step) {
    bool all_done = true;
    std::vector<Cand> next;
    for (const auto& c : beams) {
      if (c.done) {
        next.push_back(c);
        continue;
      }
      all_done = false;
      auto logits = head.logits(t, c.ids, memory);
      auto lp = detail::log_softmax_row(logits, int(c.ids.size()) - 1);
      for (int v = 0; v < head.cfg.vocab; ++v) {
        Cand n = c;
        n.ids.push_back(v);
        n.logp += lp[size_t(v)];
        n.done = v == scenes::Vocabulary::kEos;
        next.push_back(std::move(n));
      }
    }
    if (all_done) break;
    std::stable_sort(next.begin(), next.end(),
                     [](const Cand& a, const Cand& b) { return a.logp > b.logp; });
    if (int(next.size()) > beam_width) next.resize(size_t(beam_width));
    beams = std::move(next);
  }
  const Cand* best = &beams[0];
  for (const auto& c : beams)
    if (c.logp > best->logp) best = &c;
  std::vector<int> out(best->ids.begin() + 1, best->ids.end());
  if (!out.empty() && out.back() == scenes::Vocabulary::kEos) out.pop_back();
  return out;
}

// ---- SED and tagging heads --------------------------------------------------

template <class Real>
struct SedHead {
  Linear<Real> lin;  // dim -> classes, per token

  SedHead() = default;
  SedHead(int dim, int classes, std::mt19937_64& rng) : lin(dim, classes, rng) {}
  void reg(ParamRegistry<Real>& r, const std::string& prefix = "sed") { lin.reg(r, prefix); }
  Tensor<Real> logits(Tape<Real>& t, const Tensor<Real>& tokens) const {
    return lin.forward(t, tokens);
  }
};

template <class Real>
struct TagHead {
  Linear<Real> lin;  // dim -> classes, on mean-pooled tokens

  TagHead() = default;
  TagHead(int dim, int classes, std::mt19937_64& rng) : lin(dim, classes, rng) {}
  void reg(ParamRegistry<Real>& r, const std::string& prefix = "tag") { lin.reg(r, prefix); }
  Tensor<Real> logits(Tape<Real>& t, const Tensor<Real>& tokens) const {
    auto pool = Tensor<Real>::full({1, tokens.rows()}, Real(1) / Real(tokens.rows()));
    return lin.forward(t, t.matmul(pool, tokens));
  }
};

// Per-token multi-hot targets: class is active when the event overlaps at
// least half of the token's frame span.
inline std::vector<std::vector<int>> sed_token_labels(const scenes::SceneAnnotation& ann,
                                                      int frames, int r, int classes) {
  std::vector<std::vector<int>> lab(size_t(frames / r), std::vector<int>(size_t(classes), 0));
  for (const auto& e : ann.events)
    for (int t = 0; t < frames / r; ++t) {
      int lo = std::max(e.onset, t * r), hi = std::min(e.offset, (t + 1) * r);
      if (2 * (hi - lo) >= r) lab[size_t(t)][size_t(e.class_id)] = 1;
    }
  return lab;
}

// Threshold, per-class median filter over tokens, upsample to frames, merge
// short gaps, emit events.
inline std::vector<metrics::Event> sed_postprocess(const std::vector<std::vector<double>>& probs,
                                                   int r, double thresh = 0.5, int median_w = 3,
                                                   int merge_gap = 2) {
  std::vector<metrics::Event> events;
  if (probs.empty()) return events;
  int L = int(probs.size()), C = int(probs[0].size());
  for (int c = 0; c < C; ++c) {
    std::vector<int> b(size_t(L), 0);
    for (int t = 0; t < L; ++t) b[size_t(t)] = probs[size_t(t)][size_t(c)] >= thresh;
    std::vector<int> m(size_t(L), 0);
    for (int t = 0; t < L; ++t) {
      int ones = 0, n = 0;
      for (int k = t - median_w / 2; k <= t + median_w / 2; ++k, ++n)
        ones += (k >= 0 && k < L) ? b[size_t(k)] : 0;
      m[size_t(t)] = 2 * ones > n;
    }
    std::vector<int> f(size_t(L) * size_t(r), 0);
    for (int t = 0; t < L; ++t)
      std::fill_n(f.begin() + size_t(t) * r, size_t(r), m[size_t(t)]);
    // fill inactive gaps strictly shorter than merge_gap frames
    int last_on = -1;
    for (int i = 0; i < int(f.size()); ++i)
      if (f[size_t(i)]) {
        if (last_on >= 0 && i - last_on - 1 > 0 && i - last_on - 1 < merge_gap)
          std::fill(f.begin() + last_on + 1, f.begin() + i, 1);
        last_on = i;
      }
    for (int i = 0; i < int(f.size());) {
      if (!f[size_t(i)]) {
        ++i;
        continue;
      }
      int j = i;
      while (j < int(f.size()) && f[size_t(j)]) ++j;
      events.push_back({c, i, j});
      i = j;
    }
  }
  return events;
}

// ---- task models ------------------------------------------------------------

using GenFeats = std::vector<FeatureSeq>;  // aligned with dataset scene index

template <class Real, class Head>
struct TaskModel {
  fusion::FusedEncoder<Real> backbone;
  Head head;

  void reg(ParamRegistry<Real>& r) {
    backbone.reg(r);
    head.reg(r);
  }

  Tensor<Real> features(Tape<Real>& t, const scenes::Dataset& ds, const GenFeats* gen,
                        int idx) const {
    if (backbone.config().strategy == fusion::Strategy::none)
      return backbone.enc.forward_tokens(t, ds.specs[size_t(idx)]);
    if (!gen || size_t(idx) >= gen->size())
      throw Error(ErrorCode::missing_dependency,
                  "fusion strategy " + fusion::strategy_name(backbone.config().strategy) +
                      " needs precomputed generative features");
    return backbone.forward_tokens(t, ds.specs[size_t(idx)], (*gen)[size_t(idx)]);
  }
};

template <class Real>
using CaptionModel = TaskModel<Real, CaptionHead<Real>>;
template <class Real>
using SedModel = TaskModel<Real, SedHead<Real>>;
template <class Real>
using TagModel = TaskModel<Real, TagHead<Real>>;

// ---- evaluation -------------------------------------------------------------

template <class Real>
metrics::CaptionEvalInput caption_eval_input(const CaptionModel<Real>& m,
                                             const scenes::Dataset& ds, const GenFeats* gen,
                                             int split, int beam_width = 1) {
  const auto& voc = scenes::Vocabulary::instance();
  metrics::CaptionEvalInput in;
  Tape<Real> t;
  t.recording = false;
  for (int idx : ds.indices_of_split(split)) {
    auto mem = m.features(t, ds, gen, idx);
    in.hyps.push_back(voc.decode(decode_caption(m.head, mem, beam_width)));
    in.refs.push_back({ds.ann[size_t(idx)].caption});
  }
  return in;
}

template <class Real>
double eval_caption(const CaptionModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
                    int split, int beam_width = 1) {
  if (ds.indices_of_split(split).empty()) return 0.0;
  return metrics::cider_d(caption_eval_input(m, ds, gen, split, beam_width)).corpus;
}

template <class Real>
double eval_sed(const SedModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
                int split) {
  Tape<Real> t;
  t.recording = false;
  double sum = 0;
  auto idxs = ds.indices_of_split(split);
  for (int idx : idxs) {
    auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
    std::vector<std::vector<double>> probs(size_t(logits.rows()),
                                           std::vector<double>(size_t(logits.cols())));
    for (int i = 0; i < logits.rows(); ++i)
      for (int j = 0; j < logits.cols(); ++j)
        probs[size_t(i)][size_t(j)] =
            1.0 / (1.0 + std::exp(-double((*logits.data)[size_t(i) * logits.cols() + j])));
    auto pred = sed_postprocess(probs, m.backbone.enc.cfg.r);
    std::vector<metrics::Event> truth;
    for (const auto& e : ds.ann[size_t(idx)].events)
      truth.push_back({e.class_id, e.onset, e.offset});
    sum += metrics::event_f1(pred, truth).macro_f1;
  }
  return idxs.empty() ? 0.0 : sum / double(idxs.size());
}

template <class Real>
double eval_at(const TagModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
               int split) {
  Tape<Real> t;
  t.recording = false;
  if (ds.indices_of_split(split).empty()) return 0.0;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (int idx : ds.indices_of_split(split)) {
    auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
    std::vector<double> s;
    for (Real v : *logits.data) s.push_back(double(v));
    scores.push_back(std::move(s));
    labels.push_back(ds.ann[size_t(idx)].tags);
  }
  return metrics::mean_average_precision(scores, labels).map;
}

// ---- training ---------------------------------------------------------------

struct TrainOptions {
  int epochs = 20;
  std::uint64_t seed = 0;
  TrainSchedule schedule;
  std::string run_dir;  // when set, history/checkpoint/metrics are written here
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0, train_loss = 0, val_metric = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double best_val = 0;
  int best_epoch = -1;
};

namespace detail {

template <class Real>
std::map<std::string, std::vector<Real>> snapshot(const ParamRegistry<Real>& reg) {
  std::map<std::string, std::vector<Real>> s;
  for (const auto& [name, p] : reg.params) s[name] = *p->data;
  return s;
}

template <class Real>
void restore(ParamRegistry<Real>& reg, const std::map<std::string, std::vector<Real>>& s) {
  for (auto& [name, p] : reg.params) *p->data = s.at(name);
}

inline void write_history_csv(const std::string& dir, const std::vector<EpochRecord>& h) {
  std::ofstream os(dir + "/history.csv");
  os << "epoch,lr,train_loss,val_metric\n";
  os.precision(17);
  for (const auto& e : h)
    os << e.epoch << "," << e.lr << "," << e.train_loss << "," << e.val_metric << "\n";
  if (!os) throw Error(ErrorCode::io, "failed writing history.csv in " + dir);
}

// Shared epoch loop: per-scene steps, scheduled lr, divergence abort, best
// checkpoint kept by validation metric and restored at the end.
template <class Real, class StepFn, class EvalFn>
TrainHistory run_training(ParamRegistry<Real>& reg, const std::vector<int>& train_idx,
                          const TrainOptions& opts, const char* task, StepFn step, EvalFn eval) {
  if (train_idx.empty()) throw Error(ErrorCode::config, "training: empty train split");
  Adam<Real> opt;
  std::mt19937_64 rng(opts.seed);
  if (!opts.run_dir.empty()) std::filesystem::create_directories(opts.run_dir);

  TrainHistory hist;
  std::map<std::string, std::vector<Real>> best;
  for (int e = 0; e < opts.epochs; ++e) {
    double lr = lr_at_epoch(opts.schedule, e);
    auto order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (int idx : order) {
      Tape<Real> tape;
      auto loss = step(tape, idx);
      double lv = double(loss.item());
      if (!std::isfinite(lv))
        throw Error(ErrorCode::numeric, std::string(task) + " training diverged (seed " +
                                            std::to_string(opts.seed) + ", epoch " +
                                            std::to_string(e) + ")");
      sum += lv;
      opt.step(reg, tape.backward(loss), Real(lr));
    }
    EpochRecord rec{e, lr, sum / double(order.size()), eval()};
    hist.epochs.push_back(rec);
    // ties keep the later epoch, so runs without a validation split end on
    // their final weights
    if (hist.best_epoch < 0 || rec.val_metric >= hist.best_val) {
      hist.best_val = rec.val_metric;
      hist.best_epoch = e;
      best = snapshot(reg);
    }
    if (!opts.run_dir.empty()) write_history_csv(opts.run_dir, hist.epochs);
  }
  restore(reg, best);
  return hist;
}

}  // namespace detail

template <class Real>
TrainHistory train_caption(CaptionModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
                           TrainOptions opts) {
  if (opts.schedule.kind != ScheduleKind::caption_warmup)
    throw Error(ErrorCode::config, "caption training uses the warmup schedule");
  ParamRegistry<Real> reg;
  m.reg(reg);
  const auto& voc = scenes::Vocabulary::instance();
  return detail::run_training(
      reg, ds.indices_of_split(0), opts, "caption",
      [&](Tape<Real>& t, int idx) {
        auto mem = m.features(t, ds, gen, idx);
        return caption_loss(t, m.head, mem, voc.encode(ds.ann[size_t(idx)].caption));
      },
      [&] { return eval_caption(m, ds, gen, 1); });
}

template <class Real>
TrainHistory train_sed(SedModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
                       TrainOptions opts) {
  ParamRegistry<Real> reg;
  m.reg(reg);
  int frames = m.backbone.enc.cfg.frames, r = m.backbone.enc.cfg.r;
  int classes = m.backbone.enc.cfg.num_classes;
  return detail::run_training(
      reg, ds.indices_of_split(0), opts, "sed",
      [&](Tape<Real>& t, int idx) {
        auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
        auto lab = sed_token_labels(ds.ann[size_t(idx)], frames, r, classes);
        std::vector<int> flat;
        for (const auto& row : lab) flat.insert(flat.end(), row.begin(), row.end());
        return disc::bce_loss(t, logits, flat);
      },
      [&] { return eval_sed(m, ds, gen, 1); });
}

template <class Real>
TrainHistory train_at(TagModel<Real>& m, const scenes::Dataset& ds, const GenFeats* gen,
                      TrainOptions opts) {
  ParamRegistry<Real> reg;
  m.reg(reg);
  return detail::run_training(
      reg, ds.indices_of_split(0), opts, "at",
      [&](Tape<Real>& t, int idx) {
        auto logits = m.head.logits(t, m.features(t, ds, gen, idx));
        return disc::bce_loss(t, logits, ds.ann[size_t(idx)].tags);
      },
      [&] { return eval_at(m, ds, gen, 1); });
}

// ---- checkpoints ------------------------------------------------------------

template <class Head>
const char* task_kind();
template <>
inline const char* task_kind<CaptionHead<float>>() {
  return "caption";
}
template <>
inline const char* task_kind<SedHead<float>>() {
  return "sed";
}
template <>
inline const char* task_kind<TagHead<float>>() {
  return "at";
}

template <class Head>
void save_task_model(const std::string& path, TaskModel<float, Head>& m,
                     const nlohmann::json& head_cfg) {
  ParamRegistry<float> reg;
  m.reg(reg);
  save_checkpoint(path, reg,
                  {{"kind", task_kind<Head>()},
                   {"encoder", m.backbone.enc.cfg.to_json()},
                   {"fusion", m.backbone.fus.cfg.to_json()},
                   {"head", head_cfg}});
}

namespace detail {
template <class Head>
TaskModel<float, Head> load_task_common(const Checkpoint& ck, Head head) {
  std::mt19937_64 rng(0);
  disc::Encoder<float> enc(disc::EncoderConfig::from_json(ck.config.at("encoder")), rng);
  TaskModel<float, Head> m;
  m.backbone = fusion::FusedEncoder<float>(std::move(enc),
                                           fusion::FusionConfig::from_json(ck.config.at("fusion")),
                                           rng);
  m.head = std::move(head);
  ParamRegistry<float> reg;
  m.reg(reg);
  load_into(ck, reg);
  return m;
}

inline Checkpoint load_task_checkpoint(const std::string& path, const char* kind) {
  auto ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != kind)
    throw Error(ErrorCode::config, std::string("not a ") + kind + " checkpoint: " + path);
  return ck;
}
}  // namespace detail

inline CaptionModel<float> load_caption_model(const std::string& path) {
  auto ck = detail::load_task_checkpoint(path, "caption");
  std::mt19937_64 rng(0);
  return detail::load_task_common(
      ck, CaptionHead<float>(CaptionConfig::from_json(ck.config.at("head")), rng));
}

inline SedModel<float> load_sed_model(const std::string& path) {
  auto ck = detail::load_task_checkpoint(path, "sed");
  std::mt19937_64 rng(0);
  auto ec = disc::EncoderConfig::from_json(ck.config.at("encoder"));
  return detail::load_task_common(ck, SedHead<float>(ec.dim, ec.num_classes, rng));
}

inline TagModel<float> load_tag_model(const std::string& path) {
  auto ck = detail::load_task_checkpoint(path, "at");
  std::mt19937_64 rng(0);
  auto ec = disc::EncoderConfig::from_json(ck.config.at("encoder"));
  return detail::load_task_common(ck, TagHead<float>(ec.dim, ec.num_classes, rng));
}

}  // namespace gf::tasks
