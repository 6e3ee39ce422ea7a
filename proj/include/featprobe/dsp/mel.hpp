#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>
#include <vector>

#include "featprobe/dsp/stft.hpp"
#include "featprobe/dsp/wav.hpp"
#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe::dsp {

inline constexpr int kMelBins = 128;
inline constexpr double kFMax = 8000.0;
inline constexpr double kTopDb = 80.0;

enum class SpecScale { power, db };

struct MelSpectrogram {
  Matrix values;  // mel bins x frames
  SpecScale scale = SpecScale::power;
  int sampleRate = 0;
  std::size_t hop = kHop;
  bool silent = false;  // set by power_to_db when the input had no positive value

  Eigen::Index bins() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }

  /// Tensor "melspec", dims [bins, frames].
  Tensor to_tensor() const {
    std::vector<float> data(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < bins(); ++i)
      for (Eigen::Index t = 0; t < frames(); ++t)
        data[static_cast<std::size_t>(i * frames() + t)] = static_cast<float>(values(i, t));
    return Tensor("melspec", {std::uint64_t(bins()), std::uint64_t(frames())}, std::move(data));
  }

  static MelSpectrogram from_tensor(const Tensor& t, SpecScale scale, int sampleRate = 0,
                                    std::size_t hop = kHop) {
    require(t.rank() == 2, Errc::shape_mismatch, "melspec tensor must be rank 2");
    MelSpectrogram s;
    s.values.resize(Eigen::Index(t.dim(0)), Eigen::Index(t.dim(1)));
    for (Eigen::Index i = 0; i < s.bins(); ++i)
      for (Eigen::Index k = 0; k < s.frames(); ++k)
        s.values(i, k) = t[static_cast<std::size_t>(i * s.frames() + k)];
    s.scale = scale;
    s.sampleRate = sampleRate;
    s.hop = hop;
    return s;
  }
};

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
  constexpr double fSp = 200.0 / 3.0, minLogHz = 1000.0, minLogMel = minLogHz / fSp;
  const double logStep = std::log(6.4) / 27.0;
  return hz >= minLogHz ? minLogMel + std::log(hz / minLogHz) / logStep : hz / fSp;
}

inline double mel_to_hz(double mel) {
  constexpr double fSp = 200.0 / 3.0, minLogHz = 1000.0, minLogMel = minLogHz / fSp;
  const double logStep = std::log(6.4) / 27.0;
  return mel >= minLogMel ? minLogHz * std::exp(logStep * (mel - minLogMel)) : fSp * mel;
}

/// Band edges: melBins + 2 frequencies equally spaced in mel between fMin and fMax.
inline std::vector<double> mel_band_edges(int melBins, double fMin, double fMax) {
  std::vector<double> edges(static_cast<std::size_t>(melBins) + 2);
  const double lo = hz_to_mel(fMin), hi = hz_to_mel(fMax);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(edges.size() - 1));
  return edges;
}

/// Triangular, area-normalized Slaney filterbank (melBins x fftLen/2+1), fMin = 0.
inline Matrix mel_filterbank(int sampleRate, std::size_t fftLen = kFftLen, int melBins = kMelBins,
                             double fMax = kFMax) {
  require(sampleRate > 0 && melBins > 0, Errc::invalid_argument, "bad filterbank geometry");
  require(fMax <= sampleRate / 2.0, Errc::invalid_argument,
          "fMax " + std::to_string(fMax) + " exceeds Nyquist " + std::to_string(sampleRate / 2.0));
  const auto freqs = fft_frequencies(sampleRate, fftLen);
  const auto edges = mel_band_edges(melBins, 0.0, fMax);
  Matrix fb = Matrix::Zero(melBins, Eigen::Index(freqs.size()));
  for (int m = 0; m < melBins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    for (std::size_t k = 0; k < freqs.size(); ++k) {
      const double rising = (freqs[k] - lo) / (mid - lo);
      const double falling = (hi - freqs[k]) / (hi - mid);
      fb(m, Eigen::Index(k)) = std::max(0.0, std::min(rising, falling)) * norm;
    }
  }
  return fb;
}

/// Filterbank shared per (sampleRate, fftLen); read-only after construction.
inline std::shared_ptr<const Matrix> shared_filterbank(int sampleRate, std::size_t fftLen = kFftLen) {
  static std::mutex mu;
  static std::map<std::tuple<int, std::size_t>, std::shared_ptr<const Matrix>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{sampleRate, fftLen}];
  if (!slot) slot = std::make_shared<const Matrix>(mel_filterbank(sampleRate, fftLen));
  return slot;
}

/// 128-bin power mel spectrogram of a clip (already conformed to the clip length).
inline MelSpectrogram melspectrogram(const AudioClip& clip) {
  require(clip.sampleRate > 0, Errc::invalid_argument, "clip has no sample rate");
  MelSpectrogram s;
  s.values = *shared_filterbank(clip.sampleRate) * stft_power(clip);
  s.scale = SpecScale::power;
  s.sampleRate = clip.sampleRate;
  s.hop = kHop;
  return s;
}

/// 10*log10(S / max S), floored at -80 dB. An all-zero input maps to all -80 dB with `silent` set.
inline MelSpectrogram power_to_db(const MelSpectrogram& power) {
  require(power.scale == SpecScale::power, Errc::invalid_argument, "power_to_db expects a power spectrogram");
  constexpr double amin = 1e-10;
  MelSpectrogram out = power;
  out.scale = SpecScale::db;
  const double ref = power.values.size() ? power.values.maxCoeff() : 0.0;
  if (!(ref > 0.0)) {
    out.values.setConstant(-kTopDb);
    out.silent = true;
    return out;
  }
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    const double v = std::max(power.values.data()[i], amin);
    out.values.data()[i] = std::max(10.0 * std::log10(v / ref), -kTopDb);
  }
  return out;
}

/// Conform, mel, dB: the representation every downstream feature consumes.
inline MelSpectrogram db_melspectrogram(const AudioClip& clip, double clipSeconds) {
  const auto len = static_cast<std::size_t>(clipSeconds * clip.sampleRate + 0.5);
  return power_to_db(melspectrogram(conform(clip, len)));
}

}  // namespace featprobe::dsp
