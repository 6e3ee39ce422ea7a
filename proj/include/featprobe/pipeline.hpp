#pragma once

// Manifest-driven experiment runner behind the featprobe CLI.
//
// Output layout under the configured output directory:
//   melspec/<record>.ftb                  dB mel spectrogram per record ("melspec" [128, frames])
//   features/<feature>.ftb                hand-crafted matrix [n, p]
//   deep/<arch>_s<seed>_<tap>.ftb         flattened deep features [n, p]
//   similarity/<measure>_s<seed>.csv      per-seed grid; <measure>_mean.csv/.svg seed average
//   decode/rows.csv, decode/aggregate.csv per-seed and mean +- std decoding results
//   ledger-<command>.json                 config hash, step status, artifacts

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "featprobe/convnet/model.hpp"
#include "featprobe/csv.hpp"
#include "featprobe/dsp/mel.hpp"
#include "featprobe/dsp/wav.hpp"
#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"
#include "featprobe/ftb.hpp"
#include "featprobe/handcrafted.hpp"
#include "featprobe/manifest.hpp"
#include "featprobe/parallel.hpp"
#include "featprobe/probe.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/simlab.hpp"
#include "featprobe/svg.hpp"

namespace featprobe::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kDataFailure = 1, kConfigError = 2 };

// ---------------------------------------------------------------------------
// Configuration

struct WeightSource {
  convnet::ArchId arch = convnet::ArchId::Regular;
  std::uint64_t seed = 0;
  fs::path path;
  bool trained = true;
};

struct SimilarityConfig {
  std::vector<std::string> rows, cols;  // feature-set names; empty = defaults
  std::string split = "test";           // train | test | all
  std::optional<simlab::NoiseBaseline> noise;
  simlab::SimilarityOptions options;
};

struct DecodeConfig {
  probe::TrainConfig train;
  std::uint64_t deepSeed = 0;                    // classifier seed shared by all deep-feature initializations
  std::vector<std::string> sets;                 // direct mode; empty = every configured set
  std::map<std::string, std::string> sources;    // cross-task mode: source task -> feature set
  std::vector<std::vector<std::string>> concat;  // concatenation mode
};

/// Feature-set reference: "hc:<feature spec>" or "deep:<arch>:<tap>".
struct SetRef {
  bool deep = false;
  handcrafted::FeatureSpec spec;
  convnet::ArchId arch = convnet::ArchId::Regular;
  convnet::Tap tap = convnet::Tap::conv3;

  std::string name() const {
    return deep ? std::string("deep:") + convnet::arch_name(arch) + ":" + convnet::tap_name(tap)
                : "hc:" + spec.to_string();
  }

  static SetRef parse(const std::string& s) {
    SetRef r;
    if (s.rfind("hc:", 0) == 0) {
      r.spec = handcrafted::FeatureSpec::parse(s.substr(3));
      return r;
    }
    if (s.rfind("deep:", 0) == 0) {
      const auto rest = s.substr(5);
      const auto colon = rest.find(':');
      require(colon != std::string::npos, Errc::config, "deep set '" + s + "' must be deep:<arch>:<tap>");
      r.deep = true;
      r.arch = convnet::parse_arch(rest.substr(0, colon));
      r.tap = convnet::parse_tap(rest.substr(colon + 1));
      return r;
    }
    throw Error(Errc::config, "feature set '" + s + "' must start with hc: or deep:");
  }
};

struct ExperimentConfig {
  fs::path manifest;
  fs::path outDir = "featprobe-out";
  std::vector<convnet::ArchId> architectures;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<convnet::Tap> taps = {convnet::Tap::conv3};
  std::vector<handcrafted::FeatureSpec> features;
  std::vector<std::string> tasks;
  std::vector<simlab::Measure> measures = {simlab::Measure::cka};
  std::vector<WeightSource> weights;
  std::string sourceTask;  // nominal training task of imported weights; recorded in metadata only
  convnet::InitConfig init;
  convnet::ForwardOptions forward;
  SimilarityConfig similarity;
  DecodeConfig decode;
  std::size_t workers = default_workers();
  bool force = false;
  bool csv = false;
  json source = json::object();  // the document the config was read from, for hashing

  std::string hash() const { return hex64(fnv1a(source.dump())); }

  std::optional<WeightSource> weights_for(convnet::ArchId a, std::uint64_t seed) const {
    for (const auto& w : weights)
      if (w.arch == a && w.seed == seed) return w;
    return std::nullopt;
  }

  std::vector<SetRef> handcrafted_sets() const {
    std::vector<SetRef> out;
    for (const auto& f : features) {
      SetRef r;
      r.spec = f;
      out.push_back(r);
    }
    return out;
  }

  std::vector<SetRef> deep_sets() const {
    std::vector<SetRef> out;
    for (auto a : architectures)
      for (auto t : taps) {
        SetRef r;
        r.deep = true;
        r.arch = a;
        r.tap = t;
        out.push_back(r);
      }
    return out;
  }

  static ExperimentConfig from_json(const json& j, const fs::path& baseDir = {}) {
    try {
      return parse(j, baseDir);
    } catch (const json::exception& e) {
      throw Error(Errc::config, e.what());
    } catch (const Error& e) {
      if (e.code() == Errc::config) throw;
      throw Error(Errc::config, e.what());
    }
  }

  static ExperimentConfig load(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), Errc::config, "cannot read config " + path.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(Errc::config, "config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
  }

  /// Referenced paths exist and the seed list is non-empty.
  void validate() const {
    require(!seeds.empty(), Errc::config, "seed list is empty");
    require(!manifest.empty() && fs::exists(manifest), Errc::config, "manifest not found: " + manifest.string());
    for (const auto& w : weights)
      require(fs::exists(w.path), Errc::config, "weights not found: " + w.path.string());
    require(similarity.split == "train" || similarity.split == "test" || similarity.split == "all", Errc::config,
            "similarity.split must be train, test or all");
  }

 private:
  static fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  }

  static ExperimentConfig parse(const json& j, const fs::path& base) {
    require(j.is_object(), Errc::config, "config must be a JSON object");
    ExperimentConfig c;
    c.source = j;
    if (j.contains("manifest")) c.manifest = resolve(base, j.at("manifest").get<std::string>());
    if (j.contains("outDir")) c.outDir = resolve(base, j.at("outDir").get<std::string>());
    if (j.contains("architectures")) {
      const auto& a = j.at("architectures");
      if (a.is_string() && a.get<std::string>() == "all")
        c.architectures.assign(convnet::kAllArchs.begin(), convnet::kAllArchs.end());
      else
        for (const auto& s : a) c.architectures.push_back(convnet::parse_arch(s.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("taps")) {
      c.taps.clear();
      for (const auto& s : j.at("taps")) c.taps.push_back(convnet::parse_tap(s.get<std::string>()));
    }
    if (j.contains("features"))
      for (const auto& s : j.at("features")) c.features.push_back(handcrafted::FeatureSpec::parse(s.get<std::string>()));
    if (j.contains("tasks")) c.tasks = j.at("tasks").get<std::vector<std::string>>();
    if (j.contains("measures")) {
      c.measures.clear();
      for (const auto& s : j.at("measures")) c.measures.push_back(simlab::parse_measure(s.get<std::string>()));
    }
    if (j.contains("weights"))
      for (const auto& w : j.at("weights")) {
        WeightSource ws;
        ws.arch = convnet::parse_arch(w.at("architecture").get<std::string>());
        ws.seed = w.at("seed").get<std::uint64_t>();
        ws.path = resolve(base, w.at("path").get<std::string>());
        ws.trained = w.value("trained", true);
        c.weights.push_back(ws);
      }
    c.sourceTask = j.value("sourceTask", std::string{});
    if (j.contains("init")) {
      const auto& i = j.at("init");
      const auto scheme = i.value("scheme", std::string("uniformFanIn"));
      require(scheme == "uniformFanIn" || scheme == "kaimingNormal", Errc::config, "unknown init scheme " + scheme);
      c.init.scheme = scheme == "kaimingNormal" ? convnet::InitScheme::kaimingNormal : convnet::InitScheme::uniformFanIn;
      c.init.zeroOffsetWeight = i.value("zeroOffsetWeight", false);
    }
    if (j.contains("forward")) {
      const auto& f = j.at("forward");
      const auto act = f.value("activation", std::string("relu"));
      require(act == "relu" || act == "identity", Errc::config, "unknown activation " + act);
      c.forward.activation = act == "relu" ? convnet::Activation::relu : convnet::Activation::identity;
      const auto tp = f.value("tapPoint", std::string("postActivation"));
      if (tp == "postActivation")
        c.forward.tapPoint = convnet::ConvTapPoint::postActivation;
      else if (tp == "postNorm")
        c.forward.tapPoint = convnet::ConvTapPoint::postNorm;
      else if (tp == "preNorm")
        c.forward.tapPoint = convnet::ConvTapPoint::preNorm;
      else
        throw Error(Errc::config, "unknown tapPoint " + tp);
      const auto border = f.value("deformBorder", std::string("zero"));
      require(border == "zero" || border == "clamp", Errc::config, "unknown deformBorder " + border);
      c.forward.deformBorder = border == "zero" ? convnet::DeformBorder::zero : convnet::DeformBorder::clamp;
    }
    if (j.contains("similarity")) {
      const auto& s = j.at("similarity");
      c.similarity.rows = s.value("rows", std::vector<std::string>{});
      c.similarity.cols = s.value("cols", std::vector<std::string>{});
      c.similarity.split = s.value("split", std::string("test"));
      c.similarity.options.zscore = s.value("zscore", false);
      c.similarity.options.varianceKeep = s.value("varianceKeep", 0.99);
      if (s.contains("noiseBaseline")) {
        simlab::NoiseBaseline nb;
        nb.seed = s.at("noiseBaseline").value("seed", std::uint64_t{0});
        nb.width = s.at("noiseBaseline").value("width", Eigen::Index{128});
        require(nb.width >= 1, Errc::config, "noise width must be positive");
        c.similarity.noise = nb;
      }
      for (const auto& n : c.similarity.rows) SetRef::parse(n);
      for (const auto& n : c.similarity.cols) SetRef::parse(n);
    }
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      c.decode.train.learningRate = d.value("learningRate", 0.01);
      c.decode.train.momentum = d.value("momentum", 0.9);
      c.decode.train.epochs = d.value("epochs", 100);
      c.decode.train.batchSize = d.value("batchSize", std::size_t{64});
      c.decode.deepSeed = d.value("deepSeed", std::uint64_t{0});
      c.decode.sets = d.value("sets", std::vector<std::string>{});
      c.decode.sources = d.value("sources", std::map<std::string, std::string>{});
      c.decode.concat = d.value("concat", std::vector<std::vector<std::string>>{});
      for (const auto& n : c.decode.sets) SetRef::parse(n);
      for (const auto& [_, n] : c.decode.sources) SetRef::parse(n);
      for (const auto& group : c.decode.concat) {
        require(!group.empty(), Errc::config, "empty concatenation group");
        for (const auto& n : group) SetRef::parse(n);
      }
    }
    if (j.contains("workers")) c.workers = std::max<std::size_t>(1, j.at("workers").get<std::size_t>());
    c.force = j.value("force", false);
    c.csv = j.value("csv", false);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Ledger

class RunLedger {
 public:
  RunLedger(std::string command, std::string configHash)
      : command_(std::move(command)), hash_(std::move(configHash)) {}

  void step(const std::string& name, const std::string& status, const std::string& detail = {}) {
    json s = {{"step", name}, {"status", status}};
    if (!detail.empty()) s["detail"] = detail;
    steps_.push_back(std::move(s));
    if (status == "failed") ++failures_;
  }

  /// Records an output path; each path is listed once.
  void artifact(const fs::path& p) {
    const auto s = p.generic_string();
    if (seen_.insert(s).second) artifacts_.push_back(s);
  }

  std::size_t failures() const { return failures_; }
  const std::vector<std::string>& artifacts() const { return artifacts_; }

  fs::path write(const fs::path& outDir) const {
    fs::create_directories(outDir);
    json j;
    j["command"] = command_;
    j["configHash"] = hash_;
    j["steps"] = steps_;
    j["artifacts"] = artifacts_;
    j["failures"] = failures_;
    const fs::path p = outDir / ("ledger-" + command_ + ".json");
    std::ofstream out(p, std::ios::trunc);
    require(static_cast<bool>(out), Errc::io, "cannot write " + p.string());
    out << j.dump(2) << '\n';
    return p;
  }

 private:
  std::string command_, hash_;
  json steps_ = json::array();
  std::vector<std::string> artifacts_;
  std::set<std::string> seen_;
  std::size_t failures_ = 0;
};

// ---------------------------------------------------------------------------
// Paths and helpers

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

inline fs::path melspec_path(const fs::path& outDir, std::size_t record) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << record << ".ftb";
  return outDir / "melspec" / os.str();
}

inline fs::path feature_path(const fs::path& outDir, const handcrafted::FeatureSpec& spec) {
  return outDir / "features" / (sanitize(spec.to_string()) + ".ftb");
}

inline fs::path deep_path(const fs::path& outDir, convnet::ArchId a, std::uint64_t seed, convnet::Tap t) {
  return outDir / "deep" /
         (std::string(convnet::arch_name(a)) + "_s" + std::to_string(seed) + "_" + convnet::tap_name(t) + ".ftb");
}

inline std::vector<std::size_t> split_indices(const DatasetManifest& m, const std::string& split) {
  if (split == "train") return m.indices(Split::train);
  if (split == "test") return m.indices(Split::test);
  std::vector<std::size_t> all(m.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

inline void write_matrix_bundle(const FeatureMatrix& m, const std::string& name, const fs::path& path,
                                TensorBundle::Meta meta, bool csv) {
  fs::create_directories(path.parent_path());
  TensorBundle b;
  b.add(m.to_tensor(name));
  b.meta() = std::move(meta);
  ftb::write_bundle(b, path);
  if (csv) m.write_csv(fs::path(path).replace_extension(".csv"));
}

inline FeatureMatrix read_matrix_bundle(const fs::path& path, const std::string& orderHash) {
  require(fs::exists(path), Errc::io, "missing feature file " + path.string() + " (run the producing command first)");
  const auto b = ftb::read_bundle(path);
  require(b.size() == 1, Errc::shape_mismatch, path.string() + " must hold exactly one tensor");
  if (auto it = b.meta().find("orderHash"); it != b.meta().end())
    require(it->second == orderHash, Errc::shape_mismatch,
            path.string() + " was computed for a different example order");
  return FeatureMatrix::from_tensor(b.entries().front());
}

inline FeatureMatrix load_set(const ExperimentConfig& cfg, const DatasetManifest& m, const SetRef& ref,
                              std::uint64_t seed) {
  return read_matrix_bundle(ref.deep ? deep_path(cfg.outDir, ref.arch, seed, ref.tap) : feature_path(cfg.outDir, ref.spec),
                            m.order_hash());
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::io, "cannot write " + path.string());
  out << text;
}

inline std::vector<dsp::MelSpectrogram> load_spectrograms(const fs::path& outDir, const DatasetManifest& m) {
  std::vector<dsp::MelSpectrogram> out;
  out.reserve(m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto p = melspec_path(outDir, i);
    require(fs::exists(p), Errc::io, "missing spectrogram " + p.string() + " (run melspec first)");
    out.push_back(dsp::MelSpectrogram::from_tensor(ftb::read_bundle(p).get("melspec"), dsp::SpecScale::db,
                                                   m.sampleRate));
  }
  return out;
}

inline dsp::AudioClip load_clip(const DatasetManifest& m, std::size_t i) {
  auto clip = dsp::read_wav(m.resolve(m.records[i]));
  require(clip.sampleRate == m.sampleRate, Errc::invalid_argument,
          "record " + std::to_string(i) + " is " + std::to_string(clip.sampleRate) + " Hz, manifest says " +
              std::to_string(m.sampleRate) + " Hz");
  return dsp::conform(std::move(clip), m.clip_samples());
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::size_t n = 200;
  std::uint64_t seed = 0;
  int classes = 2;  // 0 tones, 1 chirps, 2 noise decays
  int sampleRate = 16000;
  double clipSeconds = 4.0;
};

struct SynthParams {
  int cls = 0;
  double pitchHz = 0.0;
  double amplitude = 0.0;
  double decaySeconds = 1.0;
};

/// Harmonic tone, linear upward chirp (f0 -> 2 f0) or decaying noise burst, with
/// a short attack, exponential decay and a faint noise floor.
inline dsp::AudioClip synth_clip(const SynthParams& p, int sampleRate, double clipSeconds, std::uint64_t noiseSeed) {
  const auto len = static_cast<std::size_t>(clipSeconds * sampleRate + 0.5);
  dsp::AudioClip clip;
  clip.sampleRate = sampleRate;
  clip.samples.resize(len);
  Rng noise(noiseSeed);
  const double twoPi = 2.0 * std::numbers::pi;
  const double T = clipSeconds;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = double(i) / sampleRate;
    const double env = std::min(1.0, t / 0.01) * std::exp(-t / p.decaySeconds);
    double s = 0.0;
    if (p.cls == 0) {
      for (int h = 1; h <= 3; ++h) s += std::sin(twoPi * h * p.pitchHz * t) / h;
      s /= 1.0 + 0.5 + 1.0 / 3.0;
    } else if (p.cls == 1) {
      s = std::sin(twoPi * p.pitchHz * (t + t * t / (2.0 * T)));
    } else {
      s = noise.uniform(-1.0, 1.0);
    }
    clip.samples[i] = p.amplitude * env * s + 0.002 * noise.uniform(-1.0, 1.0);
  }
  return clip;
}

constexpr int kSynthPitches = 10;

/// Pitch grid: kSynthPitches geometric steps spanning 220-880 Hz, rounded to 0.01 Hz.
inline double synth_pitch(int k) {
  return std::round(220.0 * std::pow(4.0, double(k) / (kSynthPitches - 1)) * 100.0) / 100.0;
}

/// Writes clips/<i>.wav and manifest.jsonl (tasks class, pitchHz, amplitude).
/// Clip i has class i mod classes and a pitch cycling through the grid; the
/// 70/30 split is stratified per (class, pitch) cell.
inline int cmd_synth(const fs::path& outDir, const SynthOptions& opt, std::ostream& log) {
  require(opt.n >= 2 && opt.classes >= 2 && opt.classes <= 3, Errc::config, "synth needs n >= 2 and 2-3 classes");
  fs::create_directories(outDir / "clips");
  Rng rng(opt.seed);
  std::vector<SynthParams> params(opt.n);
  std::vector<int> pitchIndex(opt.n);
  for (std::size_t i = 0; i < opt.n; ++i) {
    auto& p = params[i];
    p.cls = int(i % std::size_t(opt.classes));
    pitchIndex[i] = int((i / std::size_t(opt.classes)) % kSynthPitches);
    p.pitchHz = synth_pitch(pitchIndex[i]);
    p.amplitude = std::round(rng.uniform(0.3, 0.9) * 1000.0) / 1000.0;
    p.decaySeconds = rng.uniform(0.8, 2.5);
  }
  DatasetManifest m;
  m.sampleRate = opt.sampleRate;
  m.clipSeconds = opt.clipSeconds;
  m.baseDir = outDir;
  m.tasks = {{"class", TaskKind::classification}, {"pitchHz", TaskKind::regression},
             {"amplitude", TaskKind::regression}};
  m.records.resize(opt.n);
  for (int c = 0; c < opt.classes; ++c)
    for (int k = 0; k < kSynthPitches; ++k) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < opt.n; ++i)
        if (params[i].cls == c && pitchIndex[i] == k) members.push_back(i);
      rng.shuffle(members);
      const auto nTrain = static_cast<std::size_t>(std::lround(0.7 * double(members.size())));
      for (std::size_t j = 0; j < members.size(); ++j)
        m.records[members[j]].split = j < nTrain ? Split::train : Split::test;
    }
  RunLedger ledger("synth", hex64(fnv1a("synth:" + std::to_string(opt.n) + ":" + std::to_string(opt.seed) + ":" +
                                        std::to_string(opt.classes) + ":" + std::to_string(opt.sampleRate))));
  for (std::size_t i = 0; i < opt.n; ++i) {
    std::ostringstream name;
    name << "clips/" << std::setw(5) << std::setfill('0') << i << ".wav";
    auto& r = m.records[i];
    r.path = name.str();
    r.labels = {{"class", double(params[i].cls)}, {"pitchHz", params[i].pitchHz}, {"amplitude", params[i].amplitude}};
    dsp::write_wav(synth_clip(params[i], opt.sampleRate, opt.clipSeconds, opt.seed * 1000003ULL + i), outDir / r.path);
    ledger.artifact(outDir / r.path);
  }
  write_manifest(m, outDir / "manifest.jsonl");
  ledger.artifact(outDir / "manifest.jsonl");
  const auto counts = m.split_counts();
  ledger.step("synth", "ok", std::to_string(counts.train) + " train / " + std::to_string(counts.test) + " test");
  ledger.write(outDir);
  log << "synth: " << opt.n << " clips (" << counts.train << " train / " << counts.test << " test) in "
      << outDir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// melspec

inline int cmd_melspec(const ExperimentConfig& cfg, std::ostream& log) {
  const auto m = load_manifest(cfg.manifest);
  RunLedger ledger("melspec", cfg.hash());
  fs::create_directories(cfg.outDir / "melspec");
  std::vector<std::string> status(m.records.size()), detail(m.records.size());
  parallel_for(m.records.size(), cfg.workers, [&](std::size_t i) {
    const auto out = melspec_path(cfg.outDir, i);
    if (!cfg.force && fs::exists(out)) {
      status[i] = "skipped";
      return;
    }
    try {
      const auto db = dsp::db_melspectrogram(load_clip(m, i), m.clipSeconds);
      TensorBundle b;
      b.add(db.to_tensor());
      b.meta() = {{"sampleRate", std::to_string(m.sampleRate)}, {"scale", "dB"}, {"record", m.records[i].path}};
      if (db.silent) b.meta()["silent"] = "true";
      ftb::write_bundle(b, out);
      status[i] = "ok";
    } catch (const std::exception& e) {
      status[i] = "failed";
      detail[i] = e.what();
    }
  });
  std::size_t computed = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    ledger.step("record " + std::to_string(i), status[i], detail[i]);
    if (status[i] != "failed") ledger.artifact(melspec_path(cfg.outDir, i));
    if (status[i] == "ok") ++computed;
    if (status[i] == "failed") log << "melspec: record " << i << " failed: " << detail[i] << "\n";
  }
  ledger.write(cfg.outDir);
  log << "melspec: " << computed << " computed, " << m.records.size() - computed - ledger.failures() << " reused, "
      << ledger.failures() << " failed\n";
  return ledger.failures() ? kDataFailure : kOk;
}

// ---------------------------------------------------------------------------
// features

inline int cmd_features(const ExperimentConfig& cfg, std::ostream& log) {
  require(!cfg.features.empty(), Errc::config, "config lists no features");
  const auto m = load_manifest(cfg.manifest);
  RunLedger ledger("features", cfg.hash());
  std::vector<handcrafted::FeatureSpec> todo;
  for (const auto& f : cfg.features) {
    const auto p = feature_path(cfg.outDir, f);
    ledger.artifact(p);
    if (!cfg.force && fs::exists(p))
      ledger.step(f.to_string(), "skipped");
    else
      todo.push_back(f);
  }
  if (!todo.empty()) {
    const auto dbs = load_spectrograms(cfg.outDir, m);
    std::vector<dsp::AudioClip> clips;
    if (std::any_of(todo.begin(), todo.end(), [](const auto& f) { return f.needs_audio(); })) {
      clips.resize(m.records.size());
      parallel_for(clips.size(), cfg.workers, [&](std::size_t i) { clips[i] = load_clip(m, i); });
    }
    for (const auto& f : todo) {
      const handcrafted::FeatureSpec one[] = {f};
      const auto fm = handcrafted::assemble(one, dbs, clips, cfg.workers);
      write_matrix_bundle(fm, f.to_string(), feature_path(cfg.outDir, f),
                          {{"feature", f.to_string()}, {"orderHash", m.order_hash()}}, cfg.csv);
      if (cfg.csv) ledger.artifact(fs::path(feature_path(cfg.outDir, f)).replace_extension(".csv"));
      ledger.step(f.to_string(), "ok", std::to_string(fm.rows()) + "x" + std::to_string(fm.cols()));
      log << "features: " << f.to_string() << " -> " << fm.rows() << "x" << fm.cols() << "\n";
    }
  }
  ledger.write(cfg.outDir);
  return kOk;
}

// ---------------------------------------------------------------------------
// deepfeat

inline int cmd_deepfeat(const ExperimentConfig& cfg, std::ostream& log) {
  require(!cfg.architectures.empty(), Errc::config, "config lists no architectures");
  require(!cfg.taps.empty(), Errc::config, "config lists no taps");
  const auto m = load_manifest(cfg.manifest);
  RunLedger ledger("deepfeat", cfg.hash());
  std::vector<dsp::MelSpectrogram> dbs;
  const std::set<convnet::Tap> tapSet(cfg.taps.begin(), cfg.taps.end());
  for (auto arch : cfg.architectures)
    for (auto seed : cfg.seeds) {
      std::set<convnet::Tap> missing;
      for (auto t : tapSet) {
        ledger.artifact(deep_path(cfg.outDir, arch, seed, t));
        if (cfg.force || !fs::exists(deep_path(cfg.outDir, arch, seed, t))) missing.insert(t);
      }
      const std::string stepName = std::string(convnet::arch_name(arch)) + " seed " + std::to_string(seed);
      if (missing.empty()) {
        ledger.step(stepName, "skipped");
        continue;
      }
      if (dbs.empty()) dbs = load_spectrograms(cfg.outDir, m);
      const auto spec = convnet::make_architecture(arch, std::size_t(dbs.front().frames()));
      const auto ws = cfg.weights_for(arch, seed);
      convnet::InitConfig init = cfg.init;
      init.seed = seed;
      const TensorBundle weights = ws ? ftb::read_bundle(ws->path) : convnet::init_weights(spec, init);
      const bool trained = ws && ws->trained;

      std::map<convnet::Tap, std::vector<std::vector<double>>> rows;
      for (auto t : missing) rows[t].resize(dbs.size());
      parallel_for(dbs.size(), cfg.workers, [&](std::size_t i) {
        auto taps = convnet::forward_extract(spec, weights, dbs[i], missing, cfg.forward);
        for (auto& [t, tap] : taps) rows[t][i] = convnet::flatten_policy(tap);
      });
      for (auto t : missing) {
        const auto fm = FeatureMatrix::from_rows(rows[t]);
        TensorBundle::Meta meta = {{"architecture", convnet::arch_name(arch)},
                                   {"seed", std::to_string(seed)},
                                   {"tap", convnet::tap_name(t)},
                                   {"trained", trained ? "true" : "false"},
                                   {"orderHash", m.order_hash()}};
        if (ws) meta["weights"] = ws->path.generic_string();
        if (!cfg.sourceTask.empty()) meta["sourceTask"] = cfg.sourceTask;
        write_matrix_bundle(fm, convnet::tap_name(t), deep_path(cfg.outDir, arch, seed, t), meta, cfg.csv);
        if (cfg.csv) ledger.artifact(fs::path(deep_path(cfg.outDir, arch, seed, t)).replace_extension(".csv"));
        log << "deepfeat: " << convnet::arch_name(arch) << " seed " << seed << " " << convnet::tap_name(t) << " -> "
            << fm.rows() << "x" << fm.cols() << (trained ? " (trained)" : " (untrained)") << "\n";
      }
      ledger.step(stepName, "ok", trained ? "trained weights" : "untrained weights");
    }
  ledger.write(cfg.outDir);
  return kOk;
}

// ---------------------------------------------------------------------------
// similarity

inline std::string grid_csv(const simlab::SimilarityGrid& g) {
  std::ostringstream os;
  csv::Writer w(os);
  std::vector<std::string> row = {"feature"};
  row.insert(row.end(), g.colLabels.begin(), g.colLabels.end());
  w.row(row);
  for (Eigen::Index i = 0; i < g.values.rows(); ++i) {
    row = {g.rowLabels[std::size_t(i)]};
    for (Eigen::Index j = 0; j < g.values.cols(); ++j) row.push_back(csv::format_number(g.values(i, j)));
    w.row(row);
  }
  return os.str();
}

inline int cmd_similarity(const ExperimentConfig& cfg, std::ostream& log) {
  const auto m = load_manifest(cfg.manifest);
  std::vector<SetRef> rows, cols;
  for (const auto& n : cfg.similarity.rows) rows.push_back(SetRef::parse(n));
  for (const auto& n : cfg.similarity.cols) cols.push_back(SetRef::parse(n));
  if (rows.empty()) rows = cfg.deep_sets();
  if (cols.empty()) cols = cfg.handcrafted_sets();
  if (rows.empty()) rows = cols;
  require(!rows.empty() && !cols.empty(), Errc::config, "similarity needs feature sets on both axes");

  const auto idx = split_indices(m, cfg.similarity.split);
  const std::string order = hex64(fnv1a(m.order_hash() + ":" + cfg.similarity.split));
  RunLedger ledger("similarity", cfg.hash());
  const fs::path dir = cfg.outDir / "similarity";

  // hand-crafted sets do not vary with the seed; load them once
  std::map<std::string, FeatureMatrix> cache;
  auto load = [&](const SetRef& r, std::uint64_t seed) {
    const std::string key = r.deep ? r.name() + "#" + std::to_string(seed) : r.name();
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, load_set(cfg, m, r, seed).select_rows(idx)).first;
    return simlab::FeatureSet{r.name(), it->second, order};
  };

  for (auto measure : cfg.measures) {
    const std::string mname = simlab::measure_name(measure);
    std::vector<fs::path> outputs;
    for (auto seed : cfg.seeds) outputs.push_back(dir / (mname + "_s" + std::to_string(seed) + ".csv"));
    outputs.push_back(dir / (mname + "_mean.csv"));
    outputs.push_back(dir / (mname + "_mean.svg"));
    for (const auto& p : outputs) ledger.artifact(p);
    if (!cfg.force && std::all_of(outputs.begin(), outputs.end(), [](const auto& p) { return fs::exists(p); })) {
      ledger.step(mname, "skipped");
      continue;
    }
    std::vector<simlab::SimilarityGrid> grids;
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
      std::vector<simlab::FeatureSet> r, c;
      for (const auto& s : rows) r.push_back(load(s, cfg.seeds[k]));
      for (const auto& s : cols) c.push_back(load(s, cfg.seeds[k]));
      grids.push_back(simlab::similarity_grid(r, c, measure, cfg.similarity.noise, cfg.similarity.options, cfg.workers));
      write_text(outputs[k], grid_csv(grids.back()));
    }
    const auto avg = simlab::average_grids(grids);
    write_text(outputs[cfg.seeds.size()], grid_csv(avg));
    write_text(outputs[cfg.seeds.size() + 1],
               svg::heatmap(avg.values, avg.rowLabels, avg.colLabels,
                            mname + " (mean over " + std::to_string(cfg.seeds.size()) + " seeds, " +
                                cfg.similarity.split + " split)"));
    ledger.step(mname, "ok", std::to_string(avg.values.rows()) + "x" + std::to_string(avg.values.cols()));
    log << "similarity: " << mname << " grid " << avg.values.rows() << "x" << avg.values.cols() << "\n";
  }
  ledger.write(cfg.outDir);
  return kOk;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeRow {
  std::string feature, task, metric;
  std::uint64_t seed = 0;
  double value = 0.0;
};


/// Table-style "mean ± std" with percentages for accuracy.
inline std::string format_mean_std(const probe::DecodeReport& r) {
  char buf[64];
  if (r.metric == "accuracy")
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f%%", 100.0 * r.mean, 100.0 * r.std);
  else
    std::snprintf(buf, sizeof(buf), "%.4g ± %.2g", r.mean, r.std);
  return buf;
}

/// Decodes one feature set (or a concatenation) for one task. Deep sets vary the
/// feature initialization with a fixed classifier seed; hand-crafted sets vary
/// the classifier seed.
inline probe::DecodeReport decode_sets(const ExperimentConfig& cfg, const DatasetManifest& m,
                                       const std::vector<SetRef>& group, const probe::DecodeProblem& prob,
                                       const std::string& label) {
  const bool anyDeep = std::any_of(group.begin(), group.end(), [](const SetRef& r) { return r.deep; });
  probe::DecodeReport merged;
  auto blocks_for = [&](std::uint64_t seed) {
    std::vector<FeatureMatrix> blocks;
    for (const auto& r : group) blocks.push_back(load_set(cfg, m, r, seed));
    return blocks;
  };
  if (!anyDeep) {
    const auto blocks = blocks_for(0);
    const bool regression = prob.kind == TaskKind::regression;
    const std::vector<std::uint64_t> one = {0};
    merged = probe::concat_decode(blocks, prob, cfg.decode.train, regression ? std::span(one) : std::span(cfg.seeds),
                                  label);
    return merged;
  }
  const std::uint64_t lrSeed[] = {cfg.decode.deepSeed};
  for (auto seed : cfg.seeds) {
    auto r = probe::concat_decode(blocks_for(seed), prob, cfg.decode.train, lrSeed, label);
    if (merged.values.empty()) {
      merged = r;
      merged.seeds.clear();
      merged.values.clear();
      merged.confusions.clear();
    }
    merged.seeds.push_back(seed);
    merged.values.push_back(r.values.front());
    if (!r.confusions.empty()) merged.confusions.push_back(r.confusions.front());
  }
  merged.finalize();
  return merged;
}

inline int cmd_decode(const ExperimentConfig& cfg, std::ostream& log) {
  const auto m = load_manifest(cfg.manifest);
  require(!cfg.tasks.empty(), Errc::config, "config lists no tasks");
  std::map<std::string, probe::DecodeProblem> problems;
  for (const auto& t : cfg.tasks) problems.emplace(t, probe::make_problem(m, t));

  RunLedger ledger("decode", cfg.hash());
  const fs::path rowsPath = cfg.outDir / "decode" / "rows.csv";
  const fs::path aggPath = cfg.outDir / "decode" / "aggregate.csv";
  ledger.artifact(rowsPath);
  ledger.artifact(aggPath);
  if (!cfg.force && fs::exists(rowsPath) && fs::exists(aggPath)) {
    ledger.step("decode", "skipped");
    ledger.write(cfg.outDir);
    return kOk;
  }

  struct Job {
    std::string mode, label;
    std::vector<SetRef> group;
    std::string task;
  };
  std::vector<Job> jobs;
  std::vector<SetRef> direct;
  for (const auto& n : cfg.decode.sets) direct.push_back(SetRef::parse(n));
  if (direct.empty()) {
    direct = cfg.handcrafted_sets();
    for (const auto& d : cfg.deep_sets()) direct.push_back(d);
  }
  for (const auto& s : direct)
    for (const auto& t : cfg.tasks) jobs.push_back({"direct", s.name(), {s}, t});
  for (const auto& [source, set] : cfg.decode.sources)
    for (const auto& t : cfg.tasks)
      jobs.push_back({"crossTask", "source=" + source + " " + set, {SetRef::parse(set)}, t});
  for (const auto& group : cfg.decode.concat) {
    std::vector<SetRef> refs;
    std::string label;
    for (const auto& n : group) {
      refs.push_back(SetRef::parse(n));
      label += (label.empty() ? "" : " + ") + n;
    }
    for (const auto& t : cfg.tasks) jobs.push_back({"concat", label, refs, t});
  }
  require(!jobs.empty(), Errc::config, "nothing to decode");

  std::vector<probe::DecodeReport> reports(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t k) {
    reports[k] = decode_sets(cfg, m, jobs[k].group, problems.at(jobs[k].task), jobs[k].label);
  });

  std::ostringstream rowsCsv, aggCsv;
  csv::Writer rw(rowsCsv), aw(aggCsv);
  rw.row({"mode", "featureName", "task", "seed", "metric", "value"});
  aw.row({"mode", "featureName", "task", "metric", "n", "mean", "std", "formatted", "baseline"});
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& r = reports[k];
    for (std::size_t s = 0; s < r.values.size(); ++s)
      rw.row({jobs[k].mode, r.feature, r.task, std::to_string(r.seeds[s]), r.metric, csv::format_number(r.values[s])});
    aw.row({jobs[k].mode, r.feature, r.task, r.metric, std::to_string(r.values.size()), csv::format_number(r.mean),
            csv::format_number(r.std), format_mean_std(r), csv::format_number(r.baseline)});
    ledger.step(jobs[k].mode + ": " + r.feature + " -> " + r.task, "ok", format_mean_std(r));
    log << "decode [" << jobs[k].mode << "] " << r.feature << " -> " << r.task << ": " << format_mean_std(r)
        << " (baseline " << r.baseline << ")\n";
  }
  write_text(rowsPath, rowsCsv.str());
  write_text(aggPath, aggCsv.str());
  ledger.write(cfg.outDir);
  return kOk;
}

// ---------------------------------------------------------------------------
// report

/// Collates decode aggregates and mean similarity grids into report.md.
inline int cmd_report(const ExperimentConfig& cfg, std::ostream& log) {
  RunLedger ledger("report", cfg.hash());
  std::ostringstream md;
  md << "# featprobe report\n\nconfig hash `" << cfg.hash() << "`\n";
  const fs::path agg = cfg.outDir / "decode" / "aggregate.csv";
  if (fs::exists(agg)) {
    const auto t = csv::read_file(agg);
    md << "\n## Decoding\n\n| mode | features | task | result | baseline |\n|---|---|---|---|---|\n";
    for (std::size_t i = 1; i < t.size(); ++i)
      if (t[i].size() >= 9)
        md << "| " << t[i][0] << " | " << t[i][1] << " | " << t[i][2] << " | " << t[i][7] << " | " << t[i][8] << " |\n";
    ledger.step("decode", "ok");
  } else {
    ledger.step("decode", "missing");
  }
  const fs::path simDir = cfg.outDir / "similarity";
  for (auto measure : cfg.measures) {
    const fs::path p = simDir / (std::string(simlab::measure_name(measure)) + "_mean.csv");
    if (!fs::exists(p)) {
      ledger.step(simlab::measure_name(measure), "missing");
      continue;
    }
    const auto t = csv::read_file(p);
    md << "\n## Similarity: " << simlab::measure_name(measure) << " (seed mean)\n\n|";
    for (const auto& h : t.front()) md << " " << h << " |";
    md << "\n|";
    for (std::size_t j = 0; j < t.front().size(); ++j) md << "---|";
    md << "\n";
    for (std::size_t i = 1; i < t.size(); ++i) {
      md << "| " << t[i][0] << " |";
      for (std::size_t j = 1; j < t[i].size(); ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.3f |", std::stod(t[i][j]));
        md << buf;
      }
      md << "\n";
    }
    ledger.step(simlab::measure_name(measure), "ok");
  }
  write_text(cfg.outDir / "report.md", md.str());
  ledger.artifact(cfg.outDir / "report.md");
  ledger.write(cfg.outDir);
  log << "report: " << (cfg.outDir / "report.md").string() << "\n";
  return kOk;
}

}  // namespace featprobe::pipeline
