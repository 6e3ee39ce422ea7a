#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>

#include "featprobe/dsp/wav.hpp"
#include "featprobe/error.hpp"
#include "featprobe/feature_matrix.hpp"

namespace featprobe::dsp {

inline constexpr std::size_t kFftLen = 2048;
inline constexpr std::size_t kHop = 502;

/// Frame count for centered framing.
inline std::size_t frame_count(std::size_t numSamples, std::size_t hop) { return 1 + numSamples / hop; }

/// Mirror index into [0, len) without repeating the edge sample (numpy "reflect").
inline std::size_t reflect_index(long long i, std::size_t len) {
  if (len == 1) return 0;
  const long long period = 2 * static_cast<long long>(len - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<long long>(len)) i = period - i;
  return static_cast<std::size_t>(i);
}

/// Frame t of the centered, reflect-padded signal: samples [t*hop - fftLen/2, t*hop + fftLen/2).
inline void extract_frame(std::span<const double> samples, std::size_t t, std::size_t fftLen,
                          std::size_t hop, std::span<double> out) {
  const long long start = static_cast<long long>(t * hop) - static_cast<long long>(fftLen / 2);
  for (std::size_t k = 0; k < fftLen; ++k)
    out[k] = samples[reflect_index(start + static_cast<long long>(k), samples.size())];
}

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

/// Bin centre frequencies of the one-sided spectrum.
inline std::vector<double> fft_frequencies(int sampleRate, std::size_t fftLen) {
  std::vector<double> f(fftLen / 2 + 1);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = double(k) * sampleRate / double(fftLen);
  return f;
}

namespace detail {

// One r2c plan per length, created once. FFTW's planner is not thread-safe but
// executing a plan on caller-owned arrays is.
inline fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(n);
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(),
                                        reinterpret_cast<fftw_complex*>(out.data()),
                                        FFTW_ESTIMATE | FFTW_UNALIGNED);
  require(plan != nullptr, Errc::invalid_argument, "FFTW could not plan length " + std::to_string(n));
  plans.emplace(n, plan);
  return plan;
}

}  // namespace detail

/// One-sided DFT of a real frame; out.size() == in.size()/2 + 1.
inline void rfft(std::span<double> in, std::span<std::complex<double>> out) {
  fftw_execute_dft_r2c(detail::r2c_plan(in.size()), in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

/// Squared-magnitude STFT, (fftLen/2 + 1) x frames, Hann window, centered reflect framing.
inline Matrix stft_power(const AudioClip& clip, std::size_t fftLen = kFftLen, std::size_t hop = kHop) {
  require(!clip.samples.empty(), Errc::invalid_argument, "empty clip");
  require(fftLen >= 2 && fftLen % 2 == 0 && hop >= 1, Errc::invalid_argument, "bad STFT geometry");
  const std::size_t frames = frame_count(clip.samples.size(), hop);
  const std::size_t bins = fftLen / 2 + 1;
  const auto window = hann_window(fftLen);
  Matrix power(static_cast<Eigen::Index>(bins), static_cast<Eigen::Index>(frames));
  std::vector<double> frame(fftLen);
  std::vector<std::complex<double>> spec(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    extract_frame(clip.samples, t, fftLen, hop, frame);
    for (std::size_t k = 0; k < fftLen; ++k) frame[k] *= window[k];
    rfft(frame, spec);
    for (std::size_t k = 0; k < bins; ++k)
      power(Eigen::Index(k), Eigen::Index(t)) = std::norm(spec[k]);
  }
  return power;
}

}  // namespace featprobe::dsp
