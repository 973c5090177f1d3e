#pragma once

// Procedural sound-scene spectrograms with exact annotations: events with
// class/onset/offset, multi-hot tags, and a template-grammar caption that
// deterministically encodes the ordered event list.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <map>

#include <json.hpp>

#include "genfeat/tensor.hpp"

namespace gf::scenes {

inline constexpr int kNumClasses = 10;

enum ClassId : int {
  kTone = 0,
  kChirpUp,
  kChirpDown,
  kNoiseBurst,
  kHarmonicStack,
  kAmTone,
  kClickTrain,
  kBandNoise,
  kSiren,
  kThump,
};

inline const char* class_name(int c) {
  static const char* names[] = {"tone",        "chirp-up",   "chirp-down", "noise-burst",
                                "harmonic-stack", "am-tone", "click-train", "band-noise",
                                "siren",       "thump"};
  return names[c];
}

struct Spectrogram {
  int frames = 0, bins = 0;
  std::vector<float> v;

  Spectrogram() = default;
  Spectrogram(int t, int f) : frames(t), bins(f), v(size_t(t) * size_t(f), 0.0f) {}
  float& at(int t, int f) { return v[size_t(t) * bins + f]; }
  float at(int t, int f) const { return v[size_t(t) * bins + f]; }
};

struct EventParams {
  int base_bin = 20;
  int bin2 = 40;            // chirp/siren second bin (target / excursion)
  double amplitude = 0.9;
  double rate = 0.05;       // AM / siren / click periodicity (cycles per frame)
  std::uint64_t noise_seed = 0;
};

struct Event {
  int class_id = 0;
  int onset = 0;   // inclusive, frames
  int offset = 0;  // exclusive, frames
  EventParams params;
};

struct SceneAnnotation {
  std::vector<Event> events;             // ordered by onset
  std::vector<int> tags;                 // multi-hot, length kNumClasses
  std::vector<std::string> caption;      // grammar tokens, no BOS/EOS
};

struct DatasetConfig {
  std::uint64_t seed = 1234;
  int num_scenes = 2000;
  int frames = 256;
  int bins = 64;
  int min_events = 1, max_events = 3;
  int min_duration = 40, max_duration = 80;
  int min_onset_gap = 8;
  double snr = 10.0;  // event peak amplitude over noise floor mean
  double train_ratio = 0.8, val_ratio = 0.1;

  nlohmann::json to_json() const {
    return {{"seed", seed},
            {"num_scenes", num_scenes},
            {"frames", frames},
            {"bins", bins},
            {"min_events", min_events},
            {"max_events", max_events},
            {"min_duration", min_duration},
            {"max_duration", max_duration},
            {"min_onset_gap", min_onset_gap},
            {"snr", snr},
            {"train_ratio", train_ratio},
            {"val_ratio", val_ratio}};
  }
  static DatasetConfig from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.seed = j.at("seed");
    c.num_scenes = j.at("num_scenes");
    c.frames = j.at("frames");
    c.bins = j.at("bins");
    c.min_events = j.at("min_events");
    c.max_events = j.at("max_events");
    c.min_duration = j.at("min_duration");
    c.max_duration = j.at("max_duration");
    c.min_onset_gap = j.at("min_onset_gap");
    c.snr = j.at("snr");
    c.train_ratio = j.at("train_ratio");
    c.val_ratio = j.at("val_ratio");
    return c;
  }
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_fingerprint(const DatasetConfig& c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a(c.to_json().dump()));
  return buf;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4b9feull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// ---- caption grammar --------------------------------------------------------

inline const std::vector<std::string>& class_phrase(int c) {
  static const std::vector<std::vector<std::string>> phrases = {
      {"steady", "tone"},        {"rising", "sweep"},    {"falling", "sweep"},
      {"burst", "of", "noise"},  {"stack", "of", "harmonics"}, {"pulsing", "tone"},
      {"train", "of", "clicks"}, {"band", "of", "hiss"}, {"wailing", "siren"},
      {"dull", "thump"}};
  return phrases[size_t(c)];
}

// "a <A>" | "a <A> followed by a <B>" | "a <A> , then a <B> , then a <C>"
inline std::vector<std::string> build_caption(const std::vector<int>& ordered_classes) {
  std::vector<std::string> cap;
  auto phrase = [&](int c) {
    cap.push_back("a");
    for (const auto& w : class_phrase(c)) cap.push_back(w);
  };
  if (ordered_classes.size() == 1) {
    phrase(ordered_classes[0]);
  } else if (ordered_classes.size() == 2) {
    phrase(ordered_classes[0]);
    cap.push_back("followed");
    cap.push_back("by");
    phrase(ordered_classes[1]);
  } else {
    phrase(ordered_classes[0]);
    for (size_t i = 1; i < ordered_classes.size(); ++i) {
      cap.push_back(",");
      cap.push_back("then");
      phrase(ordered_classes[i]);
    }
  }
  return cap;
}

// Inverse of build_caption. The grammar is unambiguous: structural tokens
// ("a", "followed", "by", ",", "then") never occur inside class phrases.
inline std::vector<int> parse_caption(const std::vector<std::string>& cap) {
  std::vector<std::vector<std::string>> groups;
  size_t i = 0;
  auto expect = [&](const std::string& w) {
    if (i >= cap.size() || cap[i] != w)
      throw Error(ErrorCode::config, "caption parse: expected '" + w + "'");
    ++i;
  };
  while (i < cap.size()) {
    if (!groups.empty()) {
      if (cap[i] == "followed") {
        expect("followed");
        expect("by");
      } else {
        expect(",");
        expect("then");
      }
    }
    expect("a");
    std::vector<std::string> ph;
    while (i < cap.size() && cap[i] != "followed" && cap[i] != ",") ph.push_back(cap[i++]);
    groups.push_back(ph);
  }
  std::vector<int> classes;
  for (const auto& g : groups) {
    int found = -1;
    for (int c = 0; c < kNumClasses; ++c)
      if (class_phrase(c) == g) found = c;
    if (found < 0) throw Error(ErrorCode::config, "caption parse: unknown phrase");
    classes.push_back(found);
  }
  return classes;
}

struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::map<std::string, int> token_to_id;
  static constexpr int kPad = 0, kBos = 1, kEos = 2;

  static const Vocabulary& instance() {
    static Vocabulary v = build();
    return v;
  }
  static Vocabulary build() {
    Vocabulary v;
    v.id_to_token = {"<pad>", "<bos>", "<eos>", "a", "followed", "by", ",", "then"};
    for (int c = 0; c < kNumClasses; ++c)
      for (const auto& w : class_phrase(c))
        if (std::find(v.id_to_token.begin(), v.id_to_token.end(), w) == v.id_to_token.end())
          v.id_to_token.push_back(w);
    for (size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = int(i);
    return v;
  }
  int size() const { return int(id_to_token.size()); }
  int id(const std::string& t) const {
    auto it = token_to_id.find(t);
    if (it == token_to_id.end()) throw Error(ErrorCode::config, "unknown token: " + t);
    return it->second;
  }
  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i < 0 || i >= size()) throw Error(ErrorCode::config, "token id out of range");
      out.push_back(id_to_token[size_t(i)]);
    }
    return out;
  }
};

// ---- event rendering --------------------------------------------------------

// Renders a single event into a zeroed full-size spectrogram. Nonzero cells
// are the event's support.
inline Spectrogram render_event(int class_id, int onset, int offset, const EventParams& p,
                                int frames, int bins) {
  if (class_id < 0 || class_id >= kNumClasses)
    throw Error(ErrorCode::config, "render_event: bad class id");
  if (!(0 <= onset && onset < offset && offset <= frames))
    throw Error(ErrorCode::config, "render_event: bad frame range [" + std::to_string(onset) +
                                       "," + std::to_string(offset) + ") of " +
                                       std::to_string(frames));
  if (p.amplitude <= 0 || p.amplitude > 1)
    throw Error(ErrorCode::config, "render_event: amplitude must be in (0,1]");
  if (p.base_bin < 2 || p.base_bin >= bins - 2)
    throw Error(ErrorCode::config, "render_event: base_bin out of range");

  Spectrogram s(frames, bins);
  float a = float(p.amplitude);
  auto paint = [&](int t, int center, float amp) {
    if (center < 1 || center >= bins - 1) return;
    s.at(t, center) = std::max(s.at(t, center), amp);
    s.at(t, center - 1) = std::max(s.at(t, center - 1), amp * 0.6f);
    s.at(t, center + 1) = std::max(s.at(t, center + 1), amp * 0.6f);
  };
  std::mt19937_64 rng(p.noise_seed);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  int dur = offset - onset;

  switch (class_id) {
    case kTone:
      for (int t = onset; t < offset; ++t) paint(t, p.base_bin, a);
      break;
    case kChirpUp:
    case kChirpDown: {
      int b0 = p.base_bin, b1 = p.bin2;
      if (class_id == kChirpUp && b1 <= b0)
        throw Error(ErrorCode::config, "render_event: chirp-up needs bin2 > base_bin");
      if (class_id == kChirpDown && b1 >= b0)
        throw Error(ErrorCode::config, "render_event: chirp-down needs bin2 < base_bin");
      for (int t = onset; t < offset; ++t) {
        double frac = dur > 1 ? double(t - onset) / double(dur - 1) : 0.0;
        paint(t, int(std::lround(b0 + frac * (b1 - b0))), a);
      }
      break;
    }
    case kNoiseBurst:
      for (int t = onset; t < offset; ++t)
        for (int f = 1; f < bins - 1; ++f) s.at(t, f) = a * float(u(rng));
      break;
    case kHarmonicStack:
      for (int h = 1; h <= 4; ++h) {
        int b = p.base_bin * h;
        if (b >= bins - 1) break;
        float amp = a / std::pow(float(h), 0.25f);
        for (int t = onset; t < offset; ++t) paint(t, b, amp);
      }
      break;
    case kAmTone:
      for (int t = onset; t < offset; ++t) {
        float env = float(0.68 + 0.32 * std::sin(2 * 3.14159265 * p.rate * (t - onset)));
        paint(t, p.base_bin, a * env);
      }
      break;
    case kClickTrain: {
      int period = std::max(3, int(std::lround(1.0 / std::max(0.02, p.rate))));
      for (int t = onset; t < offset; t += period)
        for (int f = 4; f < bins - 4; ++f) s.at(t, f) = a;
      break;
    }
    case kBandNoise: {
      int width = std::max(4, std::min(10, bins - 2 - p.base_bin));
      for (int t = onset; t < offset; ++t)
        for (int f = p.base_bin; f < p.base_bin + width && f < bins - 1; ++f)
          s.at(t, f) = a * float(u(rng));
      break;
    }
    case kSiren: {
      int excursion = std::max(3, std::abs(p.bin2 - p.base_bin));
      for (int t = onset; t < offset; ++t) {
        double b = p.base_bin + excursion * std::sin(2 * 3.14159265 * p.rate * (t - onset));
        paint(t, int(std::lround(b)), a);
      }
      break;
    }
    case kThump:
      for (int t = onset; t < offset; ++t) {
        double x = double(t - onset) / double(dur);
        float env = float(0.45 + 0.55 * std::exp(-3.0 * x));
        for (int f = 1; f <= 8; ++f) s.at(t, f) = a * env * (f <= 4 ? 1.0f : 0.8f);
      }
      break;
    default:
      break;
  }
  return s;
}

inline EventParams sample_params(int class_id, int bins, std::mt19937_64& rng) {
  EventParams p;
  std::uniform_real_distribution<double> amp(0.85, 1.0);
  std::uniform_int_distribution<int> low(3, bins / 3), mid(bins / 4, 3 * bins / 4),
      high(2 * bins / 3, bins - 4);
  std::uniform_real_distribution<double> rate(0.04, 0.12);
  p.amplitude = amp(rng);
  p.rate = rate(rng);
  p.noise_seed = rng();
  switch (class_id) {
    case kChirpUp:
      p.base_bin = low(rng);
      p.bin2 = high(rng);
      break;
    case kChirpDown:
      p.base_bin = high(rng);
      p.bin2 = low(rng);
      break;
    case kHarmonicStack:
      p.base_bin = std::uniform_int_distribution<int>(4, bins / 5)(rng);
      break;
    case kSiren:
      p.base_bin = mid(rng);
      p.bin2 = p.base_bin + std::uniform_int_distribution<int>(4, 8)(rng);
      break;
    case kThump:
      p.base_bin = 4;
      break;
    default:
      p.base_bin = mid(rng);
      break;
  }
  return p;
}

// ---- scene generation -------------------------------------------------------

inline void generate_scene(const DatasetConfig& cfg, std::mt19937_64& rng, Spectrogram& spec,
                           SceneAnnotation& ann) {
  if (cfg.min_events < 1 || cfg.max_events < cfg.min_events || cfg.min_duration < 1 ||
      cfg.max_duration < cfg.min_duration || cfg.max_duration > cfg.frames)
    throw Error(ErrorCode::config, "scene config: bad event count or duration range");
  std::uniform_int_distribution<int> nev(cfg.min_events, cfg.max_events);
  std::uniform_int_distribution<int> durd(cfg.min_duration, cfg.max_duration);
  std::uniform_int_distribution<int> clsd(0, kNumClasses - 1);
  int n = nev(rng);

  // Rejection-resample placement: non-overlapping (2-frame margin), onsets
  // separated by at least min_onset_gap.
  std::vector<std::pair<int, int>> spans;
  for (int e = 0; e < n; ++e) {
    for (int attempt = 0;; ++attempt) {
      int dur = durd(rng);
      if (attempt > 50) dur = cfg.min_duration;
      std::uniform_int_distribution<int> od(0, cfg.frames - dur);
      int onset = od(rng);
      bool ok = true;
      for (const auto& [o, f] : spans) {
        if (onset < f + 2 && o < onset + dur + 2) ok = false;
        if (std::abs(onset - o) < cfg.min_onset_gap) ok = false;
      }
      if (ok || attempt > 200) {
        if (ok) spans.push_back({onset, onset + dur});
        break;
      }
    }
  }
  std::sort(spans.begin(), spans.end());

  spec = Spectrogram(cfg.frames, cfg.bins);
  ann = SceneAnnotation{};
  ann.tags.assign(size_t(kNumClasses), 0);
  std::vector<int> ordered_classes;
  for (const auto& [onset, offset] : spans) {
    Event ev;
    ev.class_id = clsd(rng);
    ev.onset = onset;
    ev.offset = offset;
    ev.params = sample_params(ev.class_id, cfg.bins, rng);
    auto patch = render_event(ev.class_id, ev.onset, ev.offset, ev.params, cfg.frames, cfg.bins);
    for (size_t i = 0; i < spec.v.size(); ++i) spec.v[i] = std::max(spec.v[i], patch.v[i]);
    ann.events.push_back(ev);
    ann.tags[size_t(ev.class_id)] = 1;
    ordered_classes.push_back(ev.class_id);
  }
  ann.caption = build_caption(ordered_classes);

  // additive background noise, then clamp to [0,1]
  double floor_mean = 0.9 / cfg.snr;
  std::uniform_real_distribution<double> noise(0.0, 2.0 * floor_mean);
  for (auto& v : spec.v) v = std::min(1.0f, std::max(0.0f, v + float(noise(rng))));
}

// ---- dataset ----------------------------------------------------------------

struct Dataset {
  DatasetConfig config;
  std::vector<Spectrogram> specs;
  std::vector<SceneAnnotation> ann;
  std::vector<int> split;  // 0 train, 1 val, 2 test

  std::vector<int> indices_of_split(int s) const {
    std::vector<int> out;
    for (size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(int(i));
    return out;
  }
};

inline Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  for (int i = 0; i < cfg.num_scenes; ++i) {
    // child seed per scene keeps generation order-independent
    std::mt19937_64 rng(splitmix64(cfg.seed ^ (0x517cc1b727220a95ull * std::uint64_t(i + 1))));
    Spectrogram s;
    SceneAnnotation a;
    generate_scene(cfg, rng, s, a);
    ds.specs.push_back(std::move(s));
    ds.ann.push_back(std::move(a));
    double frac = (double(i) + 0.5) / double(cfg.num_scenes);
    ds.split.push_back(frac < cfg.train_ratio ? 0 : frac < cfg.train_ratio + cfg.val_ratio ? 1 : 2);
  }
  return ds;
}

inline nlohmann::json event_to_json(const Event& e) {
  return {{"class", e.class_id},
          {"onset", e.onset},
          {"offset", e.offset},
          {"base_bin", e.params.base_bin},
          {"bin2", e.params.bin2},
          {"amplitude", e.params.amplitude},
          {"rate", e.params.rate},
          {"noise_seed", e.params.noise_seed}};
}

inline Event event_from_json(const nlohmann::json& j) {
  Event e;
  e.class_id = j.at("class");
  e.onset = j.at("onset");
  e.offset = j.at("offset");
  e.params.base_bin = j.at("base_bin");
  e.params.bin2 = j.at("bin2");
  e.params.amplitude = j.at("amplitude");
  e.params.rate = j.at("rate");
  e.params.noise_seed = j.at("noise_seed");
  return e;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "scenes");
  nlohmann::json index;
  index["config"] = ds.config.to_json();
  index["fingerprint"] = config_fingerprint(ds.config);
  auto& scenes = index["scenes"] = nlohmann::json::array();
  for (size_t i = 0; i < ds.specs.size(); ++i) {
    nlohmann::json s;
    s["id"] = i;
    s["split"] = ds.split[i];
    s["caption"] = ds.ann[i].caption;
    s["tags"] = ds.ann[i].tags;
    auto& evs = s["events"] = nlohmann::json::array();
    for (const auto& e : ds.ann[i].events) evs.push_back(event_to_json(e));
    scenes.push_back(s);

    std::ofstream os(fs::path(dir) / "scenes" / (std::to_string(i) + ".bin"), std::ios::binary);
    os.write(reinterpret_cast<const char*>(ds.specs[i].v.data()),
             std::streamsize(ds.specs[i].v.size() * sizeof(float)));
    if (!os) throw Error(ErrorCode::io, "failed writing scene " + std::to_string(i));
  }
  std::ofstream os(fs::path(dir) / "index.json");
  os << index.dump(1);
  if (!os) throw Error(ErrorCode::io, "failed writing index.json in " + dir);
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "index.json");
  if (!is) throw Error(ErrorCode::missing_dependency, "dataset index not found in " + dir);
  nlohmann::json index;
  try {
    is >> index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::io, std::string("corrupt index.json: ") + e.what());
  }
  Dataset ds;
  ds.config = DatasetConfig::from_json(index.at("config"));
  if (index.at("fingerprint") != config_fingerprint(ds.config))
    throw Error(ErrorCode::config, "dataset fingerprint mismatch in " + dir +
                                       " (config drifted since generation)");
  for (const auto& s : index.at("scenes")) {
    size_t id = s.at("id");
    SceneAnnotation a;
    a.caption = s.at("caption").get<std::vector<std::string>>();
    a.tags = s.at("tags").get<std::vector<int>>();
    for (const auto& ej : s.at("events")) a.events.push_back(event_from_json(ej));
    ds.ann.push_back(std::move(a));
    ds.split.push_back(s.at("split"));

    Spectrogram sp(ds.config.frames, ds.config.bins);
    std::ifstream bs(fs::path(dir) / "scenes" / (std::to_string(id) + ".bin"), std::ios::binary);
    if (!bs) throw Error(ErrorCode::io, "missing scene payload " + std::to_string(id));
    bs.read(reinterpret_cast<char*>(sp.v.data()), std::streamsize(sp.v.size() * sizeof(float)));
    if (size_t(bs.gcount()) != sp.v.size() * sizeof(float) || bs.peek() != EOF)
      throw Error(ErrorCode::io, "scene payload " + std::to_string(id) +
                                     " has wrong length for " + std::to_string(ds.config.frames) +
                                     "x" + std::to_string(ds.config.bins));
    ds.specs.push_back(std::move(sp));
  }
  return ds;
}

}  // namespace gf::scenes
