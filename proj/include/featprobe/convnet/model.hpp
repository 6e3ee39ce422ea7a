#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "featprobe/convnet/ops.hpp"
#include "featprobe/dsp/mel.hpp"
#include "featprobe/error.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/tensor.hpp"

namespace featprobe::convnet {

enum class ArchId { Regular, Deformable, Dilated, OneDF, OneDT };

inline constexpr std::array<ArchId, 5> kAllArchs = {ArchId::Regular, ArchId::Deformable, ArchId::Dilated,
                                                    ArchId::OneDF, ArchId::OneDT};

inline const char* arch_name(ArchId id) {
  switch (id) {
    case ArchId::Regular: return "Regular";
    case ArchId::Deformable: return "Deformable";
    case ArchId::Dilated: return "Dilated";
    case ArchId::OneDF: return "1dF";
    case ArchId::OneDT: return "1dT";
  }
  return "?";
}

inline ArchId parse_arch(const std::string& s) {
  for (ArchId id : kAllArchs)
    if (s == arch_name(id)) return id;
  if (s == "OneDF") return ArchId::OneDF;
  if (s == "OneDT") return ArchId::OneDT;
  throw Error(Errc::invalid_argument, "unknown architecture '" + s + "'");
}

enum class Tap { conv1, pool1, conv2, pool2, conv3 };

inline constexpr std::array<Tap, 5> kAllTaps = {Tap::conv1, Tap::pool1, Tap::conv2, Tap::pool2, Tap::conv3};

inline const char* tap_name(Tap t) {
  switch (t) {
    case Tap::conv1: return "conv1";
    case Tap::pool1: return "pool1";
    case Tap::conv2: return "conv2";
    case Tap::pool2: return "pool2";
    case Tap::conv3: return "conv3";
  }
  return "?";
}

inline Tap parse_tap(const std::string& s) {
  for (Tap t : kAllTaps)
    if (s == tap_name(t)) return t;
  throw Error(Errc::invalid_argument, "unknown tap '" + s + "'");
}

enum class LayerKind { conv2d, deformConv2d, batchNorm, relu, maxPool };

struct Layer {
  LayerKind kind;
  std::string name;   // parameter prefix: conv1, bn1, pool1, ...
  int block = 0;      // 1..3: which conv stage the layer belongs to
  std::size_t inChannels = 0, outChannels = 0;
  Pair kernel{1, 1};
  Conv2dParams conv;  // stride/padding/dilation; for maxPool only stride is used
  bool bias = true;
};

/// Layer list plus input geometry (1, 128, frames).
struct ArchitectureSpec {
  ArchId id = ArchId::Regular;
  std::vector<Layer> layers;
  std::size_t inputBins = dsp::kMelBins;
  std::size_t inputFrames = 128;

  std::string name() const { return arch_name(id); }
};

namespace detail {

inline void add_block(ArchitectureSpec& a, int block, std::size_t cin, std::size_t cout, Pair k,
                      Conv2dParams p, bool deform = false) {
  const std::string n = std::to_string(block);
  a.layers.push_back({deform ? LayerKind::deformConv2d : LayerKind::conv2d, "conv" + n, block, cin, cout, k, p,
                      !deform});
  a.layers.push_back({LayerKind::batchNorm, "bn" + n, block, cout, cout, {1, 1}, {}, true});
  a.layers.push_back({LayerKind::relu, "relu" + n, block, cout, cout, {1, 1}, {}, true});
}

inline void add_pool(ArchitectureSpec& a, int block, std::size_t c, Pair k) {
  Layer l{LayerKind::maxPool, "pool" + std::to_string(block), block, c, c, k, {}, true};
  l.conv.stride = k;
  a.layers.push_back(l);
}

}  // namespace detail

/// The five CNNs. Layer hyperparameters do not depend on the corpus; only the
/// input frame count (and so every downstream width) does.
inline ArchitectureSpec make_architecture(ArchId id, std::size_t frames = 128) {
  ArchitectureSpec a;
  a.id = id;
  a.inputFrames = frames;
  using detail::add_block;
  using detail::add_pool;
  switch (id) {
    case ArchId::Regular:
      add_block(a, 1, 1, 10, {5, 5}, {});
      add_pool(a, 1, 10, {2, 2});
      add_block(a, 2, 10, 20, {5, 5}, {{3, 3}, {3, 3}, {1, 1}});
      add_pool(a, 2, 20, {2, 2});
      add_block(a, 3, 20, 30, {5, 5}, {{2, 2}, {0, 0}, {1, 1}});
      break;
    case ArchId::Deformable:
      add_block(a, 1, 1, 10, {5, 5}, {});
      add_pool(a, 1, 10, {2, 2});
      add_block(a, 2, 10, 20, {5, 5}, {{3, 3}, {3, 3}, {1, 1}});
      add_pool(a, 2, 20, {2, 2});
      // offset conv: k3 s2 p1 -> 50 channels; sampling conv k5 at stride 5 over the expanded map
      add_block(a, 3, 20, 30, {5, 5}, {{2, 2}, {1, 1}, {1, 1}}, true);
      break;
    case ArchId::Dilated:
      add_block(a, 1, 1, 10, {5, 5}, {{1, 1}, {0, 0}, {3, 3}});
      add_pool(a, 1, 10, {2, 2});
      add_block(a, 2, 10, 20, {5, 5}, {{2, 2}, {3, 3}, {2, 2}});
      add_pool(a, 2, 20, {2, 2});
      add_block(a, 3, 20, 30, {5, 5}, {{2, 2}, {1, 1}, {1, 1}});
      break;
    case ArchId::OneDF:
      add_block(a, 1, 1, 10, {5, 1}, {{1, 1}, {0, 0}, {3, 1}});
      add_pool(a, 1, 10, {2, 1});
      add_block(a, 2, 10, 20, {5, 1}, {{2, 1}, {3, 0}, {2, 1}});
      add_pool(a, 2, 20, {2, 1});
      add_block(a, 3, 20, 30, {5, 1}, {{2, 1}, {1, 0}, {1, 1}});
      break;
    case ArchId::OneDT:
      add_block(a, 1, 1, 10, {1, 5}, {{1, 1}, {0, 0}, {1, 3}});
      add_pool(a, 1, 10, {1, 2});
      add_block(a, 2, 10, 20, {1, 5}, {{1, 2}, {0, 3}, {1, 2}});
      add_pool(a, 2, 20, {1, 2});
      add_block(a, 3, 20, 30, {1, 5}, {{1, 2}, {0, 1}, {1, 1}});
      break;
  }
  return a;
}

inline constexpr std::size_t kOffsetKernel = 3;

/// Ordered (name, dims) of every parameter tensor the architecture needs.
inline std::vector<std::pair<std::string, Dims>> parameter_table(const ArchitectureSpec& a) {
  std::vector<std::pair<std::string, Dims>> t;
  for (const auto& l : a.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
        t.emplace_back(l.name + ".w", Dims{l.outChannels, l.inChannels, l.kernel.h, l.kernel.w});
        if (l.bias) t.emplace_back(l.name + ".b", Dims{l.outChannels});
        break;
      case LayerKind::deformConv2d:
        t.emplace_back(l.name + ".w", Dims{l.outChannels, l.inChannels, l.kernel.h, l.kernel.w});
        t.emplace_back(l.name + ".p.w",
                       Dims{2 * l.kernel.h * l.kernel.w, l.inChannels, kOffsetKernel, kOffsetKernel});
        t.emplace_back(l.name + ".p.b", Dims{2 * l.kernel.h * l.kernel.w});
        break;
      case LayerKind::batchNorm:
        for (const char* s : {".gamma", ".beta", ".mean", ".var"}) t.emplace_back(l.name + s, Dims{l.outChannels});
        break;
      default: break;
    }
  }
  return t;
}

/// (C, H, W) after each layer, in layer order.
inline std::vector<std::array<std::size_t, 3>> layer_shapes(const ArchitectureSpec& a) {
  std::vector<std::array<std::size_t, 3>> shapes;
  std::array<std::size_t, 3> s = {1, a.inputBins, a.inputFrames};
  for (const auto& l : a.layers) {
    switch (l.kind) {
      case LayerKind::conv2d:
        s = {l.outChannels, conv_out_size(s[1], l.kernel.h, l.conv.stride.h, l.conv.padding.h, l.conv.dilation.h),
             conv_out_size(s[2], l.kernel.w, l.conv.stride.w, l.conv.padding.w, l.conv.dilation.w)};
        break;
      case LayerKind::deformConv2d:
        // output grid is the offset conv's
        s = {l.outChannels, conv_out_size(s[1], kOffsetKernel, l.conv.stride.h, l.conv.padding.h, 1),
             conv_out_size(s[2], kOffsetKernel, l.conv.stride.w, l.conv.padding.w, 1)};
        break;
      case LayerKind::maxPool:
        s = {s[0], s[1] >= l.kernel.h ? (s[1] - l.kernel.h) / l.conv.stride.h + 1 : 0,
             s[2] >= l.kernel.w ? (s[2] - l.kernel.w) / l.conv.stride.w + 1 : 0};
        break;
      default: break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

enum class InitScheme {
  uniformFanIn,   // U(-1/sqrt(fanIn), 1/sqrt(fanIn)) for weights and biases
  kaimingNormal,  // N(0, 2/fanIn) weights, zero biases
};

struct InitConfig {
  std::uint64_t seed = 0;
  InitScheme scheme = InitScheme::uniformFanIn;
  bool zeroOffsetWeight = false;  // start the deformable offset conv at zero weight
};

/// Fresh untrained weights; identical (arch, cfg) gives a bit-identical bundle.
inline TensorBundle init_weights(const ArchitectureSpec& arch, const InitConfig& cfg) {
  Rng rng(cfg.seed);
  TensorBundle bundle;
  std::size_t fanIn = 1;
  for (auto& [name, dims] : parameter_table(arch)) {
    Tensor t(name, dims);
    const auto suffix = name.substr(name.rfind('.'));
    if (suffix == ".w") {
      fanIn = static_cast<std::size_t>(dims[1] * dims[2] * dims[3]);
    }
    if (suffix == ".gamma" || suffix == ".var") {
      for (float& v : t.data()) v = 1.0f;
    } else if (suffix == ".w" || suffix == ".b") {
      const bool offsetWeight = name.ends_with(".p.w");
      const float bound = static_cast<float>(1.0 / std::sqrt(double(fanIn)));
      for (float& v : t.data()) {
        if (offsetWeight && cfg.zeroOffsetWeight) {
          v = 0.0f;
        } else if (cfg.scheme == InitScheme::kaimingNormal) {
          v = suffix == ".b" ? 0.0f : static_cast<float>(rng.normal() * std::sqrt(2.0 / double(fanIn)));
        } else {
          do v = static_cast<float>(rng.uniform(-1.0, 1.0) * bound);
          while (!(std::fabs(v) < bound));
        }
      }
    }
    bundle.add(std::move(t));
  }
  bundle.meta()["architecture"] = arch.name();
  bundle.meta()["seed"] = std::to_string(cfg.seed);
  bundle.meta()["trained"] = "false";
  return bundle;
}

/// Names and dims must match the parameter table exactly (no extras).
inline void validate_weights(const ArchitectureSpec& arch, const TensorBundle& w) {
  const auto table = parameter_table(arch);
  for (const auto& [name, dims] : table) {
    require(w.contains(name), Errc::shape_mismatch, arch.name() + " weights missing '" + name + "'");
    require(w.get(name).dims() == dims, Errc::shape_mismatch,
            arch.name() + " weight '" + name + "' has dims " + dims_string(w.get(name).dims()) + ", expected " +
                dims_string(dims));
  }
  require(w.size() == table.size(), Errc::shape_mismatch,
          arch.name() + " weights carry " + std::to_string(w.size() - table.size()) + " unexpected tensors");
  if (auto it = w.meta().find("architecture"); it != w.meta().end())
    require(it->second == arch.name(), Errc::shape_mismatch,
            "bundle is for " + it->second + ", not " + arch.name());
}

enum class Activation { relu, identity };

// Where a conv tap is read within conv -> batchnorm -> activation.
enum class ConvTapPoint { postActivation, postNorm, preNorm };

struct ForwardOptions {
  Activation activation = Activation::relu;
  ConvTapPoint tapPoint = ConvTapPoint::postActivation;
  DeformBorder deformBorder = DeformBorder::zero;
};

struct LayerTap {
  Tap layer;
  Tensor tensor;  // [C, H, W]
};

/// Runs the frozen network on one dB spectrogram and returns the requested taps.
inline std::map<Tap, LayerTap> forward_extract(const ArchitectureSpec& arch, const TensorBundle& weights,
                                               const dsp::MelSpectrogram& spec, const std::set<Tap>& taps,
                                               const ForwardOptions& opt = {}) {
  require(spec.bins() == Eigen::Index(arch.inputBins) && spec.frames() == Eigen::Index(arch.inputFrames),
          Errc::shape_mismatch,
          arch.name() + " expects input 128x" + std::to_string(arch.inputFrames) + ", got " +
              std::to_string(spec.bins()) + "x" + std::to_string(spec.frames()));
  validate_weights(arch, weights);

  std::vector<float> px(static_cast<std::size_t>(spec.values.size()));
  for (Eigen::Index i = 0; i < spec.bins(); ++i)
    for (Eigen::Index t = 0; t < spec.frames(); ++t)
      px[static_cast<std::size_t>(i * spec.frames() + t)] = static_cast<float>(spec.values(i, t));
  Tensor x("x", {1, std::uint64_t(spec.bins()), std::uint64_t(spec.frames())}, std::move(px));

  auto param = [&](const std::string& n) { return weights.get(n).data(); };
  std::map<Tap, LayerTap> out;
  auto capture = [&](Tap t, const Tensor& v) {
    if (taps.count(t)) out.insert_or_assign(t, LayerTap{t, v});
  };
  static constexpr Tap convTaps[] = {Tap::conv1, Tap::conv2, Tap::conv3};
  static constexpr Tap poolTaps[] = {Tap::pool1, Tap::pool2, Tap::pool1};

  for (const auto& l : arch.layers) {
    const Tap convTap = convTaps[l.block - 1];
    switch (l.kind) {
      case LayerKind::conv2d:
        x = conv2d(x, weights.get(l.name + ".w"), l.bias ? param(l.name + ".b") : std::span<const float>{}, l.conv);
        if (opt.tapPoint == ConvTapPoint::preNorm) capture(convTap, x);
        break;
      case LayerKind::deformConv2d: {
        DeformParams dp;
        dp.offset = l.conv;
        dp.border = opt.deformBorder;
        x = deform_conv2d(x, weights.get(l.name + ".w"), weights.get(l.name + ".p.w"), param(l.name + ".p.b"), dp);
        if (opt.tapPoint == ConvTapPoint::preNorm) capture(convTap, x);
        break;
      }
      case LayerKind::batchNorm:
        x = batchnorm_infer(x, param(l.name + ".gamma"), param(l.name + ".beta"), param(l.name + ".mean"),
                            param(l.name + ".var"));
        if (opt.tapPoint == ConvTapPoint::postNorm) capture(convTap, x);
        break;
      case LayerKind::relu:
        if (opt.activation == Activation::relu) x = relu(std::move(x));
        if (opt.tapPoint == ConvTapPoint::postActivation) capture(convTap, x);
        break;
      case LayerKind::maxPool:
        x = maxpool2d(x, l.kernel, l.conv.stride);
        capture(poolTaps[l.block - 1], x);
        break;
    }
    // conv3 is the last tap; fully connected layers are never evaluated
    if (out.size() == taps.size()) break;
  }
  return out;
}

/// conv1/pool1: channel mean, flattened H*W. Later taps: flattened C*H*W.
inline std::vector<double> flatten_policy(const LayerTap& tap) {
  const Tensor& t = tap.tensor;
  const std::size_t C = t.dim(0), hw = t.dim(1) * t.dim(2);
  std::vector<double> row;
  if (tap.layer == Tap::conv1 || tap.layer == Tap::pool1) {
    row.assign(hw, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i) row[i] += t[c * hw + i];
    for (double& v : row) v /= double(C);
  } else {
    row.assign(t.data().begin(), t.data().end());
  }
  return row;
}

}  // namespace featprobe::convnet
