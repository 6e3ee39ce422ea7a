#pragma once

// Hand-crafted feature catalog computed from dB mel spectrograms, plus the
// frame-wise spectral descriptors computed from raw audio.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include "featprobe/dsp/mel.hpp"
#include "featprobe/dsp/stft.hpp"
#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"
#include "featprobe/parallel.hpp"

namespace featprobe::handcrafted {

using dsp::AudioClip;
using dsp::MelSpectrogram;

enum class Kind {
  meanPower,
  medianPower,
  timeToDb,
  rms,
  spectralCentroid,
  spectralBandwidth,
  spectralFlatness,
  spectralRolloff,
  waveletStat,
  waveletCombined,
  top4Combined,
};

enum class Stat { mean, median, std, var, kurtosis, q25, q75 };

// overTime: transform each frequency row along time, one value per mel bin.
// overFrequency: transform each frame along frequency, one value per frame.
enum class Axis { overTime, overFrequency };

inline const char* stat_name(Stat s) {
  switch (s) {
    case Stat::mean: return "mean";
    case Stat::median: return "median";
    case Stat::std: return "std";
    case Stat::var: return "var";
    case Stat::kurtosis: return "kurtosis";
    case Stat::q25: return "q25";
    case Stat::q75: return "q75";
  }
  return "?";
}

inline const char* axis_name(Axis a) { return a == Axis::overTime ? "overTime" : "overFrequency"; }

inline Stat parse_stat(const std::string& s) {
  for (Stat v : {Stat::mean, Stat::median, Stat::std, Stat::var, Stat::kurtosis, Stat::q25, Stat::q75})
    if (s == stat_name(v)) return v;
  throw Error(Errc::invalid_argument, "unknown statistic '" + s + "'");
}

inline Axis parse_axis(const std::string& s) {
  if (s == "overTime") return Axis::overTime;
  if (s == "overFrequency") return Axis::overFrequency;
  throw Error(Errc::invalid_argument, "unknown axis '" + s + "'");
}

struct FeatureSpec {
  Kind kind = Kind::meanPower;
  double threshold = -70.0;  // timeToDb, dB
  double fraction = 0.85;    // spectralRolloff
  double bandwidth = 25.0;   // wavelet features
  Stat stat = Stat::mean;
  Axis axis = Axis::overTime;

  static FeatureSpec mean_power() { return {Kind::meanPower}; }
  static FeatureSpec median_power() { return {Kind::medianPower}; }
  static FeatureSpec time_to_db(double threshold) {
    FeatureSpec s{Kind::timeToDb};
    s.threshold = threshold;
    return s;
  }
  static FeatureSpec wavelet_stat(double a, Stat stat, Axis axis) {
    FeatureSpec s{Kind::waveletStat};
    s.bandwidth = a;
    s.stat = stat;
    s.axis = axis;
    return s;
  }
  static FeatureSpec wavelet_combined(double a, Axis axis) {
    FeatureSpec s{Kind::waveletCombined};
    s.bandwidth = a;
    s.axis = axis;
    return s;
  }
  static FeatureSpec top4_combined() { return {Kind::top4Combined}; }
  static FeatureSpec framewise(Kind k) { return {k}; }

  bool needs_audio() const {
    return kind == Kind::rms || kind == Kind::spectralCentroid || kind == Kind::spectralBandwidth ||
           kind == Kind::spectralFlatness || kind == Kind::spectralRolloff;
  }

  /// Canonical text form, accepted back by parse().
  std::string to_string() const {
    auto num = [](double v) { return csv::format_number(v); };
    switch (kind) {
      case Kind::meanPower: return "meanPower";
      case Kind::medianPower: return "medianPower";
      case Kind::timeToDb: return "timeToDb(" + num(threshold) + ")";
      case Kind::rms: return "rms";
      case Kind::spectralCentroid: return "spectralCentroid";
      case Kind::spectralBandwidth: return "spectralBandwidth";
      case Kind::spectralFlatness: return "spectralFlatness";
      case Kind::spectralRolloff: return "spectralRolloff(" + num(fraction) + ")";
      case Kind::waveletStat:
        return "waveletStat(" + num(bandwidth) + "," + stat_name(stat) + "," + axis_name(axis) + ")";
      case Kind::waveletCombined: return "waveletCombined(" + num(bandwidth) + "," + axis_name(axis) + ")";
      case Kind::top4Combined: return "top4Combined";
    }
    return "?";
  }

  static FeatureSpec parse(const std::string& text) {
    static const std::regex call(R"(^\s*([A-Za-z0-9]+)\s*(?:\((.*)\))?\s*$)");
    std::smatch m;
    require(std::regex_match(text, m, call), Errc::invalid_argument, "bad feature spec '" + text + "'");
    const std::string name = m[1];
    std::vector<std::string> args;
    if (m[2].matched) {
      std::string a = m[2];
      std::size_t start = 0;
      while (start <= a.size()) {
        auto comma = a.find(',', start);
        std::string tok = a.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        tok.erase(0, tok.find_first_not_of(' '));
        tok.erase(tok.find_last_not_of(' ') + 1);
        if (!tok.empty()) args.push_back(tok);
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    }
    auto arity = [&](std::size_t lo, std::size_t hi) {
      require(args.size() >= lo && args.size() <= hi, Errc::invalid_argument,
              "wrong argument count in feature spec '" + text + "'");
    };
    auto number = [&](const std::string& s) {
      try {
        return std::stod(s);
      } catch (...) {
        throw Error(Errc::invalid_argument, "bad number '" + s + "' in '" + text + "'");
      }
    };
    FeatureSpec s;
    if (name == "meanPower" || name == "medianPower" || name == "rms" || name == "spectralCentroid" ||
        name == "spectralBandwidth" || name == "spectralFlatness" || name == "top4Combined") {
      arity(0, 0);
      s.kind = name == "meanPower"           ? Kind::meanPower
               : name == "medianPower"       ? Kind::medianPower
               : name == "rms"               ? Kind::rms
               : name == "spectralCentroid"  ? Kind::spectralCentroid
               : name == "spectralBandwidth" ? Kind::spectralBandwidth
               : name == "spectralFlatness"  ? Kind::spectralFlatness
                                             : Kind::top4Combined;
    } else if (name == "timeToDb") {
      arity(1, 1);
      s = time_to_db(number(args[0]));
      require(s.threshold < 0, Errc::invalid_argument, "timeToDb threshold must be negative dB");
    } else if (name == "spectralRolloff") {
      arity(0, 1);
      s.kind = Kind::spectralRolloff;
      if (!args.empty()) s.fraction = number(args[0]);
      require(s.fraction > 0 && s.fraction <= 1, Errc::invalid_argument, "rolloff fraction must be in (0, 1]");
    } else if (name == "waveletStat") {
      arity(2, 3);
      s = wavelet_stat(number(args[0]), parse_stat(args[1]),
                       args.size() == 3 ? parse_axis(args[2]) : Axis::overTime);
    } else if (name == "waveletCombined") {
      arity(1, 2);
      s = wavelet_combined(number(args[0]), args.size() == 2 ? parse_axis(args[1]) : Axis::overTime);
    } else {
      throw Error(Errc::invalid_argument, "unknown feature '" + name + "'");
    }
    if (s.kind == Kind::waveletStat || s.kind == Kind::waveletCombined)
      require(s.bandwidth > 0, Errc::invalid_argument, "wavelet bandwidth must be positive");
    return s;
  }
};

// ---------------------------------------------------------------------------
// Summary statistics

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / double(x.size());
}

/// Population variance.
inline double variance(std::span<const double> x) {
  const double mu = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  return x.empty() ? 0.0 : s / double(x.size());
}

/// Linear-interpolation quantile (position (n-1)q in sorted order).
inline double quantile(std::span<const double> x, double q) {
  if (x.empty()) return 0.0;
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double pos = (double(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - double(lo)) * (s[hi] - s[lo]);
}

/// Fisher (excess) kurtosis, population moments; 0 for zero-variance input.
inline double kurtosis(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double mu = mean(x);
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = (v - mu) * (v - mu);
    m2 += d;
    m4 += d * d;
  }
  m2 /= double(x.size());
  m4 /= double(x.size());
  if (m2 <= 1e-24 * (1.0 + mu * mu)) return 0.0;
  return m4 / (m2 * m2) - 3.0;
}

inline double summarize(std::span<const double> x, Stat stat) {
  switch (stat) {
    case Stat::mean: return mean(x);
    case Stat::median: return quantile(x, 0.5);
    case Stat::std: return std::sqrt(variance(x));
    case Stat::var: return variance(x);
    case Stat::kurtosis: return kurtosis(x);
    case Stat::q25: return quantile(x, 0.25);
    case Stat::q75: return quantile(x, 0.75);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Power and decay features

inline Vector mean_power(const MelSpectrogram& db) { return db.values.rowwise().mean(); }

inline Vector median_power(const MelSpectrogram& db) {
  Vector out(db.bins());
  std::vector<double> row(static_cast<std::size_t>(db.frames()));
  for (Eigen::Index i = 0; i < db.bins(); ++i) {
    for (Eigen::Index t = 0; t < db.frames(); ++t) row[std::size_t(t)] = db.values(i, t);
    out(i) = quantile(row, 0.5);
  }
  return out;
}

/// First frame at or below `threshold` dB per bin; bins that never get there report the frame count.
inline Vector time_to_db(const MelSpectrogram& db, double threshold) {
  Vector out(db.bins());
  for (Eigen::Index i = 0; i < db.bins(); ++i) {
    Eigen::Index t = 0;
    while (t < db.frames() && db.values(i, t) > threshold) ++t;
    out(i) = double(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frame-wise spectral descriptors on a power spectrum column.

inline double spectral_centroid(std::span<const double> power, std::span<const double> freqs) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) {
    num += freqs[k] * power[k];
    den += power[k];
  }
  return den > 0.0 ? num / den : 0.0;
}

inline double spectral_bandwidth(std::span<const double> power, std::span<const double> freqs) {
  double den = 0.0;
  for (double v : power) den += v;
  if (!(den > 0.0)) return 0.0;
  const double c = spectral_centroid(power, freqs);
  double num = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) num += power[k] * (freqs[k] - c) * (freqs[k] - c);
  return std::sqrt(num / den);
}

inline double spectral_flatness(std::span<const double> power) {
  constexpr double amin = 1e-10;
  double logSum = 0.0, sum = 0.0;
  for (double v : power) {
    const double g = std::max(v, amin);
    logSum += std::log(g);
    sum += g;
  }
  if (std::all_of(power.begin(), power.end(), [](double v) { return !(v > 0.0); })) return 1.0;
  const double n = double(power.size());
  return std::exp(logSum / n) / (sum / n);
}

inline double spectral_rolloff(std::span<const double> power, std::span<const double> freqs,
                               double fraction = 0.85) {
  double total = 0.0;
  for (double v : power) total += v;
  if (!(total > 0.0)) return 0.0;
  double cum = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) {
    cum += power[k];
    if (cum >= fraction * total) return freqs[k];
  }
  return freqs.back();
}

/// Frame-wise descriptor over the same framing as the mel spectrogram.
/// RMS is taken over the raw (untapered) frame samples.
inline Vector framewise_spectral(const AudioClip& clip, const FeatureSpec& spec,
                                 std::size_t fftLen = dsp::kFftLen, std::size_t hop = dsp::kHop) {
  require(spec.needs_audio(), Errc::invalid_argument, spec.to_string() + " is not frame-wise");
  require(!clip.samples.empty(), Errc::invalid_argument, "empty clip");
  const std::size_t frames = dsp::frame_count(clip.samples.size(), hop);
  Vector out(static_cast<Eigen::Index>(frames));
  if (spec.kind == Kind::rms) {
    std::vector<double> frame(fftLen);
    for (std::size_t t = 0; t < frames; ++t) {
      dsp::extract_frame(clip.samples, t, fftLen, hop, frame);
      double s = 0.0;
      for (double v : frame) s += v * v;
      out(Eigen::Index(t)) = std::sqrt(s / double(fftLen));
    }
    return out;
  }
  const Matrix power = dsp::stft_power(clip, fftLen, hop);
  const auto freqs = dsp::fft_frequencies(clip.sampleRate, fftLen);
  std::vector<double> col(static_cast<std::size_t>(power.rows()));
  for (std::size_t t = 0; t < frames; ++t) {
    for (Eigen::Index k = 0; k < power.rows(); ++k) col[std::size_t(k)] = power(k, Eigen::Index(t));
    double v = 0.0;
    switch (spec.kind) {
      case Kind::spectralCentroid: v = spectral_centroid(col, freqs); break;
      case Kind::spectralBandwidth: v = spectral_bandwidth(col, freqs); break;
      case Kind::spectralFlatness: v = spectral_flatness(col); break;
      case Kind::spectralRolloff: v = spectral_rolloff(col, freqs, spec.fraction); break;
      default: break;
    }
    out(Eigen::Index(t)) = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ricker wavelet features

/// psi(t) = 2/(sqrt(3a) pi^(1/4)) (1 - (t/a)^2) exp(-t^2 / (2a^2)), sampled at
/// integer offsets centred on (M-1)/2.
inline std::vector<double> ricker_sample(double a, std::size_t M) {
  require(a > 0 && M >= 1, Errc::invalid_argument, "ricker needs a > 0 and M >= 1");
  const double amp = 2.0 / (std::sqrt(3.0 * a) * std::pow(std::numbers::pi, 0.25));
  std::vector<double> w(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double t = double(i) - (double(M) - 1.0) / 2.0;
    const double u = (t * t) / (a * a);
    w[i] = amp * (1.0 - u) * std::exp(-u / 2.0);
  }
  return w;
}

inline std::size_t ricker_support(double a, std::size_t length) {
  return std::max<std::size_t>(1, std::min(static_cast<std::size_t>(10.0 * a), length));
}

/// "same"-mode zero-padded convolution, output aligned with x.
inline std::vector<double> convolve_same(std::span<const double> x, std::span<const double> w) {
  const long long L = static_cast<long long>(x.size()), M = static_cast<long long>(w.size());
  const long long shift = (M - 1) / 2;
  std::vector<double> y(x.size(), 0.0);
  for (long long i = 0; i < L; ++i) {
    // y[i] = sum_j x[j] w[i + shift - j], 0 <= i + shift - j < M
    const long long jlo = std::max(0LL, i + shift - M + 1), jhi = std::min(L - 1, i + shift);
    double s = 0.0;
    for (long long j = jlo; j <= jhi; ++j) s += x[std::size_t(j)] * w[std::size_t(i + shift - j)];
    y[std::size_t(i)] = s;
  }
  return y;
}

/// Ricker CWT at bandwidth a along each row (overTime) or column (overFrequency),
/// reduced by each requested statistic. Result is (#stats) x (#sequences).
inline Matrix cwt_summaries(const MelSpectrogram& db, double a, std::span<const Stat> stats, Axis axis) {
  const bool rows = axis == Axis::overTime;
  const Eigen::Index count = rows ? db.bins() : db.frames();
  const Eigen::Index len = rows ? db.frames() : db.bins();
  const auto w = ricker_sample(a, ricker_support(a, std::size_t(len)));
  Matrix out(Eigen::Index(stats.size()), count);
  std::vector<double> seq(static_cast<std::size_t>(len));
  for (Eigen::Index s = 0; s < count; ++s) {
    for (Eigen::Index k = 0; k < len; ++k) seq[std::size_t(k)] = rows ? db.values(s, k) : db.values(k, s);
    const auto coeffs = convolve_same(seq, w);
    for (std::size_t q = 0; q < stats.size(); ++q) out(Eigen::Index(q), s) = summarize(coeffs, stats[q]);
  }
  return out;
}

inline Vector cwt_summary(const MelSpectrogram& db, double a, Stat stat, Axis axis) {
  const Stat one[] = {stat};
  return cwt_summaries(db, a, one, axis).row(0).transpose();
}

inline constexpr Stat kCombinedStats[] = {Stat::std, Stat::var, Stat::kurtosis, Stat::q25, Stat::q75};

// ---------------------------------------------------------------------------
// Assembly

struct FeatureBlock {
  std::string name;
  Vector values;
};

/// Blocks for one example in the order they are concatenated.
inline std::vector<FeatureBlock> compute_blocks(const FeatureSpec& spec, const MelSpectrogram& db,
                                                const AudioClip* clip = nullptr) {
  require(db.scale == dsp::SpecScale::db, Errc::invalid_argument, "features expect a dB spectrogram");
  std::vector<FeatureBlock> out;
  switch (spec.kind) {
    case Kind::meanPower: out.push_back({spec.to_string(), mean_power(db)}); break;
    case Kind::medianPower: out.push_back({spec.to_string(), median_power(db)}); break;
    case Kind::timeToDb: out.push_back({spec.to_string(), time_to_db(db, spec.threshold)}); break;
    case Kind::waveletStat:
      out.push_back({spec.to_string(), cwt_summary(db, spec.bandwidth, spec.stat, spec.axis)});
      break;
    case Kind::waveletCombined: {
      const Matrix m = cwt_summaries(db, spec.bandwidth, kCombinedStats, spec.axis);
      for (std::size_t q = 0; q < std::size(kCombinedStats); ++q)
        out.push_back({FeatureSpec::wavelet_stat(spec.bandwidth, kCombinedStats[q], spec.axis).to_string(),
                       m.row(Eigen::Index(q)).transpose()});
      break;
    }
    case Kind::top4Combined:
      for (const auto& part : {FeatureSpec::mean_power(), FeatureSpec::time_to_db(-70.0),
                               FeatureSpec::wavelet_stat(25.0, Stat::mean, Axis::overTime),
                               FeatureSpec::wavelet_combined(25.0, Axis::overTime)}) {
        auto sub = compute_blocks(part, db, clip);
        out.insert(out.end(), sub.begin(), sub.end());
      }
      break;
    default:
      require(clip != nullptr, Errc::invalid_argument, spec.to_string() + " needs the audio clip");
      out.push_back({spec.to_string(), framewise_spectral(*clip, spec)});
      break;
  }
  return out;
}

/// One row per example: the requested features concatenated in spec order.
/// `clips` is only consulted by frame-wise features and may be empty otherwise.
inline FeatureMatrix assemble(std::span<const FeatureSpec> specs, std::span<const MelSpectrogram> dbs,
                              std::span<const AudioClip> clips = {}, std::size_t workers = 1) {
  require(!specs.empty(), Errc::invalid_argument, "empty feature spec list");
  require(!dbs.empty(), Errc::invalid_argument, "no spectrograms");
  const bool audio = std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.needs_audio(); });
  require(!audio || clips.size() == dbs.size(), Errc::invalid_argument,
          "frame-wise features need one clip per spectrogram");
  for (std::size_t i = 1; i < dbs.size(); ++i)
    require(dbs[i].bins() == dbs[0].bins() && dbs[i].frames() == dbs[0].frames(), Errc::shape_mismatch,
            "spectrogram " + std::to_string(i) + " geometry differs from spectrogram 0");

  std::vector<std::vector<double>> rows(dbs.size());
  std::vector<std::vector<std::string>> names(dbs.size());
  parallel_for(dbs.size(), workers, [&](std::size_t i) {
    for (const auto& spec : specs)
      for (const auto& block : compute_blocks(spec, dbs[i], audio ? &clips[i] : nullptr)) {
        rows[i].insert(rows[i].end(), block.values.begin(), block.values.end());
        if (i == 0)
          for (Eigen::Index k = 0; k < block.values.size(); ++k)
            names[0].push_back(block.name + "[" + std::to_string(k) + "]");
      }
  });
  return FeatureMatrix::from_rows(rows, std::move(names[0]));
}

}  // namespace featprobe::handcrafted
