#pragma once

// Forward-only CNN primitives on [C, H, W] f32 tensors. Accumulation is in
// double with a fixed loop order, so results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "featprobe/error.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe::convnet {

struct Pair {
  std::size_t h = 1, w = 1;
  bool operator==(const Pair&) const = default;
};

struct Conv2dParams {
  Pair stride{1, 1};
  Pair padding{0, 0};
  Pair dilation{1, 1};
};

/// floor((in + 2p - d(k-1) - 1)/s) + 1, or 0 when the kernel does not fit.
inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t s, std::size_t p, std::size_t d) {
  const long long span = static_cast<long long>(d * (k - 1) + 1);
  const long long padded = static_cast<long long>(in + 2 * p);
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / static_cast<long long>(s)) + 1;
}

inline void require_chw(const Tensor& t, const char* what) {
  require(t.rank() == 3, Errc::shape_mismatch, std::string(what) + " must be [C,H,W], got " + dims_string(t.dims()));
}

/// Cross-correlation with zero padding. `bias` may be empty.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::span<const float> bias,
                     const Conv2dParams& p) {
  require_chw(input, "conv2d input");
  require(weight.rank() == 4, Errc::shape_mismatch, "conv2d weight must be [Cout,Cin,kh,kw]");
  const std::size_t cin = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == cin, Errc::shape_mismatch,
          "conv2d weight expects " + std::to_string(weight.dim(1)) + " input channels, got " + std::to_string(cin));
  require(bias.empty() || bias.size() == cout, Errc::shape_mismatch, "conv2d bias length");
  require(p.stride.h && p.stride.w && p.dilation.h && p.dilation.w, Errc::invalid_argument, "zero stride/dilation");
  const std::size_t Ho = conv_out_size(H, kh, p.stride.h, p.padding.h, p.dilation.h);
  const std::size_t Wo = conv_out_size(W, kw, p.stride.w, p.padding.w, p.dilation.w);
  require(Ho >= 1 && Wo >= 1, Errc::shape_mismatch, "kernel larger than padded input");

  Tensor out(input.name(), {cout, Ho, Wo});
  const auto in = input.data();
  const auto wt = weight.data();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double acc = bias.empty() ? 0.0 : double(bias[o]);
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < kh; ++i) {
            const long long iy = static_cast<long long>(y * p.stride.h + i * p.dilation.h) -
                                 static_cast<long long>(p.padding.h);
            if (iy < 0 || iy >= static_cast<long long>(H)) continue;
            const float* row = &in[(c * H + std::size_t(iy)) * W];
            const float* wrow = &wt[((o * cin + c) * kh + i) * kw];
            for (std::size_t j = 0; j < kw; ++j) {
              const long long ix = static_cast<long long>(x * p.stride.w + j * p.dilation.w) -
                                   static_cast<long long>(p.padding.w);
              if (ix < 0 || ix >= static_cast<long long>(W)) continue;
              acc += double(row[ix]) * double(wrow[j]);
            }
          }
        out.at(o, y, x) = static_cast<float>(acc);
      }
  return out;
}

/// Bilinear read of channel c at fractional (y, x); outside the input reads 0.
/// Integer coordinates reproduce the stored value exactly.
inline double bilinear_sample(const Tensor& input, std::size_t c, double y, double x) {
  const long long H = static_cast<long long>(input.dim(1)), W = static_cast<long long>(input.dim(2));
  const double fy = std::floor(y), fx = std::floor(x);
  const long long y0 = static_cast<long long>(fy), x0 = static_cast<long long>(fx);
  const double dy = y - fy, dx = x - fx;
  auto read = [&](long long yy, long long xx) -> double {
    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
    return input.at(c, std::size_t(yy), std::size_t(xx));
  };
  double v = 0.0;
  if ((1 - dy) * (1 - dx) != 0.0) v += (1 - dy) * (1 - dx) * read(y0, x0);
  if ((1 - dy) * dx != 0.0) v += (1 - dy) * dx * read(y0, x0 + 1);
  if (dy * (1 - dx) != 0.0) v += dy * (1 - dx) * read(y0 + 1, x0);
  if (dy * dx != 0.0) v += dy * dx * read(y0 + 1, x0 + 1);
  return v;
}

// zero: samples outside the input read 0. clamp: sample positions are clamped
// into the input first, as the reference implementation does.
enum class DeformBorder { zero, clamp };

struct DeformParams {
  Conv2dParams offset{{2, 2}, {1, 1}, {1, 1}};  // the offset-predicting conv
  DeformBorder border = DeformBorder::zero;
};

/// Deformable convolution (kernel k x k, no bias).
///
/// Offsets come from conv2d(input, offsetWeight, offsetBias) and carry 2*k*k
/// channels: [0, k*k) row shifts, [k*k, 2*k*k) column shifts, tap n = ky*k + kx.
/// The output grid matches the offset map. Output (i, j) samples tap (ky, kx) at
///   row 1 + s_h*i + (ky - (k-1)/2) + dy,  col 1 + s_w*j + (kx - (k-1)/2) + dx
/// where s is the offset conv stride; the k*k samples per location are then
/// contracted with the weight (the expanded map convolved at stride k).
inline Tensor deform_conv2d(const Tensor& input, const Tensor& weight, const Tensor& offsetWeight,
                            std::span<const float> offsetBias, const DeformParams& p = {}) {
  require_chw(input, "deform_conv2d input");
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3), Errc::shape_mismatch,
          "deform weight must be [Cout,Cin,k,k]");
  const std::size_t cin = input.dim(0), cout = weight.dim(0), k = weight.dim(2), taps = k * k;
  require(weight.dim(1) == cin, Errc::shape_mismatch, "deform weight input channels");
  require(offsetWeight.rank() == 4 && offsetWeight.dim(0) == 2 * taps, Errc::shape_mismatch,
          "offset conv must produce " + std::to_string(2 * taps) + " channels");
  const Tensor offsets = conv2d(input, offsetWeight, offsetBias, p.offset);
  const std::size_t Ho = offsets.dim(1), Wo = offsets.dim(2);
  const long long half = static_cast<long long>(k - 1) / 2;

  Tensor out(input.name(), {cout, Ho, Wo});
  std::vector<double> sampled(cin * taps);
  const auto wt = weight.data();
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t n = ky * k + kx;
          double y = 1.0 + double(p.offset.stride.h * i) + double(static_cast<long long>(ky) - half) +
                           double(offsets.at(n, i, j));
          double x = 1.0 + double(p.offset.stride.w * j) + double(static_cast<long long>(kx) - half) +
                     double(offsets.at(taps + n, i, j));
          if (p.border == DeformBorder::clamp) {
            y = std::clamp(y, 0.0, double(input.dim(1) - 1));
            x = std::clamp(x, 0.0, double(input.dim(2) - 1));
          }
          for (std::size_t c = 0; c < cin; ++c) sampled[c * taps + n] = bilinear_sample(input, c, y, x);
        }
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = 0.0;
        const float* w = &wt[o * cin * taps];
        for (std::size_t q = 0; q < cin * taps; ++q) acc += double(w[q]) * sampled[q];
        out.at(o, i, j) = static_cast<float>(acc);
      }
    }
  return out;
}

inline Tensor batchnorm_infer(const Tensor& input, std::span<const float> gamma, std::span<const float> beta,
                              std::span<const float> runningMean, std::span<const float> runningVar,
                              double eps = 1e-5) {
  require_chw(input, "batchnorm input");
  const std::size_t C = input.dim(0), hw = input.dim(1) * input.dim(2);
  require(gamma.size() == C && beta.size() == C && runningMean.size() == C && runningVar.size() == C,
          Errc::shape_mismatch, "batchnorm parameter length must equal channel count");
  Tensor out = input;
  for (std::size_t c = 0; c < C; ++c) {
    require(runningVar[c] >= 0.0f, Errc::invalid_argument, "negative running variance");
    const double scale = double(gamma[c]) / std::sqrt(double(runningVar[c]) + eps);
    for (std::size_t i = 0; i < hw; ++i) {
      float& v = out[c * hw + i];
      v = static_cast<float>(scale * (double(v) - double(runningMean[c])) + double(beta[c]));
    }
  }
  return out;
}

inline Tensor relu(Tensor t) {
  for (float& v : t.data()) v = std::max(v, 0.0f);
  return t;
}

/// Max pooling, no padding, trailing rows/cols that do not fill a window are dropped.
inline Tensor maxpool2d(const Tensor& input, Pair kernel = {2, 2}, Pair stride = {2, 2}) {
  require_chw(input, "maxpool input");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  require(H >= kernel.h && W >= kernel.w, Errc::shape_mismatch, "maxpool input smaller than window");
  const std::size_t Ho = (H - kernel.h) / stride.h + 1, Wo = (W - kernel.w) / stride.w + 1;
  Tensor out(input.name(), {C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::size_t i = 0; i < kernel.h; ++i)
          for (std::size_t j = 0; j < kernel.w; ++j) m = std::max(m, input.at(c, y * stride.h + i, x * stride.w + j));
        out.at(c, y, x) = m;
      }
  return out;
}

}  // namespace featprobe::convnet
