#pragma once

// Caption metrics (BLEU-n, ROUGE-L, meteor_lite, CIDEr-D) and
// classification/detection metrics (mAP, event-based F1).
//
// meteor_lite is a deliberately simplified METEOR: exact-match unigram
// alignment only, no stemming or synonyms. It is named differently to avoid
// claiming parity with the official scorer.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "genfeat/tensor.hpp"

namespace gf::metrics {

using Tokens = std::vector<std::string>;

struct CaptionEvalInput {
  std::vector<Tokens> hyps;
  std::vector<std::vector<Tokens>> refs;  // >=1 reference per item

  void validate() const {
    if (hyps.empty()) throw Error(ErrorCode::config, "caption eval: empty corpus");
    if (refs.size() != hyps.size())
      throw Error(ErrorCode::config, "caption eval: hyps/refs length mismatch");
    for (const auto& r : refs)
      if (r.empty()) throw Error(ErrorCode::config, "caption eval: item with no references");
  }
};

struct MetricResult {
  double corpus = 0;
  std::vector<double> per_item;
};

namespace detail {

inline std::map<Tokens, int> ngram_counts(const Tokens& s, int n) {
  std::map<Tokens, int> c;
  for (int i = 0; i + n <= int(s.size()); ++i)
    ++c[Tokens(s.begin() + i, s.begin() + i + n)];
  return c;
}

}  // namespace detail

// ---- BLEU ------------------------------------------------------------------
// Corpus-level modified n-gram precision, geometric mean over orders 1..n,
// with brevity penalty against the closest reference length (ties: shorter).
// per_item holds sentence-level BLEU of each hypothesis.
inline MetricResult bleu_n(const CaptionEvalInput& in, int n) {
  in.validate();
  if (n < 1 || n > 4) throw Error(ErrorCode::config, "bleu: n must be in 1..4");

  auto score_counts = [&](const std::vector<size_t>& items) -> double {
    std::vector<long> matched(size_t(n), 0), total(size_t(n), 0);
    long hyp_len = 0, ref_len = 0;
    for (size_t idx : items) {
      const auto& hyp = in.hyps[idx];
      hyp_len += long(hyp.size());
      long best_ref = long(in.refs[idx][0].size());
      for (const auto& r : in.refs[idx]) {
        long d = std::labs(long(r.size()) - long(hyp.size()));
        long db = std::labs(best_ref - long(hyp.size()));
        if (d < db || (d == db && long(r.size()) < best_ref)) best_ref = long(r.size());
      }
      ref_len += best_ref;
      for (int g = 1; g <= n; ++g) {
        auto hc = detail::ngram_counts(hyp, g);
        std::map<Tokens, int> max_ref;
        for (const auto& r : in.refs[idx])
          for (const auto& [ng, c] : detail::ngram_counts(r, g))
            max_ref[ng] = std::max(max_ref[ng], c);
        for (const auto& [ng, c] : hc) {
          total[size_t(g - 1)] += c;
          auto it = max_ref.find(ng);
          if (it != max_ref.end()) matched[size_t(g - 1)] += std::min(c, it->second);
        }
      }
    }
    double logsum = 0;
    for (int g = 0; g < n; ++g) {
      if (total[size_t(g)] == 0 || matched[size_t(g)] == 0) return 0.0;
      logsum += std::log(double(matched[size_t(g)]) / double(total[size_t(g)]));
    }
    double bp = hyp_len < ref_len ? std::exp(1.0 - double(ref_len) / double(hyp_len)) : 1.0;
    if (hyp_len == 0) return 0.0;
    return bp * std::exp(logsum / n);
  };

  MetricResult res;
  std::vector<size_t> all(in.hyps.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  res.corpus = score_counts(all);
  for (size_t i = 0; i < in.hyps.size(); ++i) res.per_item.push_back(score_counts({i}));
  return res;
}

// ---- ROUGE-L ---------------------------------------------------------------
inline int lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

// LCS-based F with beta = 1.2; per-item max over references, mean over corpus.
inline MetricResult rouge_l(const CaptionEvalInput& in, double beta = 1.2) {
  in.validate();
  MetricResult res;
  for (size_t i = 0; i < in.hyps.size(); ++i) {
    const auto& hyp = in.hyps[i];
    double best = 0;
    if (!hyp.empty()) {
      for (const auto& ref : in.refs[i]) {
        if (ref.empty()) continue;
        int l = lcs_length(hyp, ref);
        if (l == 0) continue;
        double p = double(l) / double(hyp.size());
        double r = double(l) / double(ref.size());
        double f = (1 + beta * beta) * p * r / (r + beta * beta * p);
        best = std::max(best, f);
      }
    }
    res.per_item.push_back(best);
    res.corpus += best;
  }
  res.corpus /= double(in.hyps.size());
  return res;
}

// ---- meteor_lite -----------------------------------------------------------
// In-order first-available exact unigram alignment. F_mean = 10PR/(R+9P),
// penalty = 0.5 * (chunks/matches)^3, score = F_mean * (1 - penalty).
inline double meteor_lite_pair(const Tokens& hyp, const Tokens& ref) {
  std::vector<int> hyp_to_ref(hyp.size(), -1);
  std::vector<bool> used(ref.size(), false);
  int matches = 0;
  for (size_t i = 0; i < hyp.size(); ++i)
    for (size_t j = 0; j < ref.size(); ++j)
      if (!used[j] && hyp[i] == ref[j]) {
        used[j] = true;
        hyp_to_ref[i] = int(j);
        ++matches;
        break;
      }
  if (matches == 0) return 0.0;
  double p = double(matches) / double(hyp.size());
  double r = double(matches) / double(ref.size());
  double f = 10.0 * p * r / (r + 9.0 * p);
  int chunks = 0;
  int prev = -2;
  for (size_t i = 0; i < hyp.size(); ++i) {
    if (hyp_to_ref[i] < 0) {
      prev = -2;
      continue;
    }
    if (hyp_to_ref[i] != prev + 1) ++chunks;
    prev = hyp_to_ref[i];
  }
  double penalty = 0.5 * std::pow(double(chunks) / double(matches), 3.0);
  return f * (1.0 - penalty);
}

inline MetricResult meteor_lite(const CaptionEvalInput& in) {
  in.validate();
  MetricResult res;
  for (size_t i = 0; i < in.hyps.size(); ++i) {
    double best = 0;
    if (!in.hyps[i].empty())
      for (const auto& ref : in.refs[i]) best = std::max(best, meteor_lite_pair(in.hyps[i], ref));
    res.per_item.push_back(best);
    res.corpus += best;
  }
  res.corpus /= double(in.hyps.size());
  return res;
}

// ---- CIDEr-D ---------------------------------------------------------------
// TF-IDF n-gram vectors for n=1..4, count clipping against the reference,
// Gaussian length penalty (sigma=6), mean over n, x10. Document frequencies
// come from the evaluation reference corpus.
struct CiderDf {
  std::map<Tokens, int> df[4];
  long num_docs = 0;

  static CiderDf from_refs(const std::vector<std::vector<Tokens>>& refs) {
    if (refs.empty()) throw Error(ErrorCode::config, "cider: empty df corpus");
    CiderDf d;
    d.num_docs = long(refs.size());
    for (const auto& item_refs : refs)
      for (int n = 1; n <= 4; ++n) {
        std::map<Tokens, int> seen;
        for (const auto& ref : item_refs)
          for (const auto& [ng, c] : detail::ngram_counts(ref, n)) seen[ng] = 1;
        for (const auto& [ng, one] : seen) d.df[n - 1][ng] += 1;
      }
    return d;
  }

  double idf(const Tokens& ng, int n) const {
    auto it = df[n - 1].find(ng);
    int f = it == df[n - 1].end() ? 1 : it->second;
    return std::log(double(num_docs)) - std::log(double(f));
  }
};

inline double cider_d_pair(const Tokens& hyp, const std::vector<Tokens>& refs,
                           const CiderDf& df, double sigma = 6.0) {
  double total = 0;
  for (const auto& ref : refs) {
    double val = 0;
    for (int n = 1; n <= 4; ++n) {
      auto hc = detail::ngram_counts(hyp, n);
      auto rc = detail::ngram_counts(ref, n);
      double dot = 0, nh = 0, nr = 0;
      for (const auto& [ng, c] : hc) {
        double w = df.idf(ng, n);
        nh += double(c) * w * double(c) * w;
        auto it = rc.find(ng);
        if (it != rc.end()) dot += double(std::min(c, it->second)) * w * double(it->second) * w;
      }
      for (const auto& [ng, c] : rc) {
        double w = df.idf(ng, n);
        nr += double(c) * w * double(c) * w;
      }
      double sim = (nh > 0 && nr > 0) ? dot / (std::sqrt(nh) * std::sqrt(nr)) : 0.0;
      double delta = double(long(hyp.size()) - long(ref.size()));
      sim *= std::exp(-delta * delta / (2.0 * sigma * sigma));
      val += sim;
    }
    total += val / 4.0;
  }
  return 10.0 * total / double(refs.size());
}

inline MetricResult cider_d(const CaptionEvalInput& in, double sigma = 6.0) {
  in.validate();
  auto df = CiderDf::from_refs(in.refs);
  MetricResult res;
  for (size_t i = 0; i < in.hyps.size(); ++i) {
    double s = cider_d_pair(in.hyps[i], in.refs[i], df, sigma);
    res.per_item.push_back(s);
    res.corpus += s;
  }
  res.corpus /= double(in.hyps.size());
  return res;
}

// ---- mAP -------------------------------------------------------------------
// Per-class average precision (precision at each positive, averaged), macro
// mean over classes that have at least one positive. Ties in score keep stable
// index order.
struct MapResult {
  double map = 0;
  std::vector<double> per_class_ap;   // NaN-free: skipped classes excluded
  std::vector<int> skipped_classes;   // classes with no positives
};

inline MapResult mean_average_precision(const std::vector<std::vector<double>>& scores,
                                        const std::vector<std::vector<int>>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw Error(ErrorCode::config, "mAP: empty or mismatched inputs");
  size_t num_classes = scores[0].size();
  MapResult res;
  double sum = 0;
  int counted = 0;
  for (size_t c = 0; c < num_classes; ++c) {
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a][c] > scores[b][c]; });
    int positives = 0;
    double ap = 0;
    int hits = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      if (labels[order[rank]][c]) {
        ++hits;
        ap += double(hits) / double(rank + 1);
      }
    }
    for (const auto& l : labels) positives += l[c];
    if (positives == 0) {
      res.skipped_classes.push_back(int(c));
      continue;
    }
    ap /= double(positives);
    res.per_class_ap.push_back(ap);
    sum += ap;
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::config, "mAP: no class has positives");
  res.map = sum / double(counted);
  return res;
}

// ---- event-based F1 --------------------------------------------------------

struct Event {
  int class_id = 0;
  int onset = 0;   // frames
  int offset = 0;  // frames, exclusive
};

struct EventF1Result {
  double macro_f1 = 0;
  std::map<int, double> per_class_f1, per_class_precision, per_class_recall;
};

// An event matches iff same class, |onset delta| <= collar and
// |offset delta| <= max(collar, 20% of the true duration). Greedy one-to-one
// matching by onset proximity.
inline EventF1Result event_f1(const std::vector<Event>& pred, const std::vector<Event>& truth,
                              int collar = 2) {
  std::map<int, std::pair<std::vector<Event>, std::vector<Event>>> by_class;
  for (const auto& e : pred) by_class[e.class_id].first.push_back(e);
  for (const auto& e : truth) by_class[e.class_id].second.push_back(e);

  EventF1Result res;
  double sum = 0;
  for (auto& [cls, pt] : by_class) {
    auto& [p, t] = pt;
    struct Cand {
      int dist, pi, ti;
    };
    std::vector<Cand> cands;
    for (int i = 0; i < int(p.size()); ++i)
      for (int j = 0; j < int(t.size()); ++j) {
        int don = std::abs(p[size_t(i)].onset - t[size_t(j)].onset);
        int dur = t[size_t(j)].offset - t[size_t(j)].onset;
        double off_tol = std::max(double(collar), 0.2 * double(dur));
        int doff = std::abs(p[size_t(i)].offset - t[size_t(j)].offset);
        if (don <= collar && double(doff) <= off_tol) cands.push_back({don, i, j});
      }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.dist < b.dist;
    });
    std::vector<bool> pu(p.size(), false), tu(t.size(), false);
    int tp = 0;
    for (const auto& c : cands)
      if (!pu[size_t(c.pi)] && !tu[size_t(c.ti)]) {
        pu[size_t(c.pi)] = tu[size_t(c.ti)] = true;
        ++tp;
      }
    double prec = p.empty() ? 0.0 : double(tp) / double(p.size());
    double rec = t.empty() ? 0.0 : double(tp) / double(t.size());
    double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    res.per_class_precision[cls] = prec;
    res.per_class_recall[cls] = rec;
    res.per_class_f1[cls] = f1;
    sum += f1;
  }
  res.macro_f1 = by_class.empty() ? 1.0 : sum / double(by_class.size());
  return res;
}

// metrics.json schema: {metric_name: {corpus, per_item, config}}
inline nlohmann::json to_report_entry(const MetricResult& r, const nlohmann::json& config) {
  return {{"corpus", r.corpus}, {"per_item", r.per_item}, {"config", config}};
}

}  // namespace gf::metrics
