#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "unmix/autodiff.hpp"
#include "unmix/ops.hpp"
#include "unmix/rng.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

enum class BranchKind { spectral_1d = 0, spatial_2d = 1, volumetric_3d = 2 };
enum class Variant { mb, mb_dr, mb_res };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::mb: return "MB";
    case Variant::mb_dr: return "MB-DR";
    default: return "MB-Res";
  }
}

// Declarative description of a multi-branch unmixing network.
//
// Fixed by the architecture: the 1D branch uses spectral kernels 9/7/5 (valid)
// each followed by ReLU and width-2 max pooling; the 2D branch uses stacked
// 2x2 same-padded convolutions; the 3D branch uses three blocks of 2x2x9 and
// 2x2x5 same-padded convolutions. The dimensionality-reduction tail (MB-DR,
// MB-Res) repeats the 2x2x9 / 2x2x5 kernels without padding at a larger
// spectral stride. Filter counts and head widths are configurable.
struct MBConfig {
  std::int64_t patch = 3;       // p, odd
  std::int64_t bands = 0;       // lambda
  std::int64_t endmembers = 0;  // c
  std::array<bool, 3> branches{true, true, true};  // 1D, 2D, 3D
  Variant variant = Variant::mb;
  std::array<int, 3> filters_1d{16, 32, 32};
  std::vector<int> filters_2d{16, 16, 16, 16, 22};
  std::array<int, 6> filters_3d{32, 32, 32, 32, 32, 32};
  std::vector<int> head_units{512, 64};
  int reduction_filters = 8;
  std::int64_t reduction_spectral_stride = 4;

  bool branch_enabled(BranchKind b) const { return branches[static_cast<std::size_t>(b)]; }

  int enabled_branch_count() const {
    return static_cast<int>(branches[0]) + static_cast<int>(branches[1]) +
           static_cast<int>(branches[2]);
  }

  void validate() const {
    if (patch < 1 || patch % 2 == 0) {
      throw ConfigError("patch size must be odd and positive, got " + std::to_string(patch));
    }
    if (bands < 1) throw ConfigError("band count must be positive");
    if (endmembers < 1) throw ConfigError("endmember count must be positive");
    if (enabled_branch_count() == 0) throw ConfigError("at least one branch must be enabled");
    if ((branch_enabled(BranchKind::spectral_1d) || branch_enabled(BranchKind::volumetric_3d)) &&
        bands < 9) {
      throw ConfigError("1D/3D branches need at least 9 bands (largest spectral kernel)");
    }
    if (filters_2d.empty()) throw ConfigError("2D branch needs at least one layer");
    for (int f : filters_1d)
      if (f < 1) throw ConfigError("non-positive 1D filter count");
    for (int f : filters_2d)
      if (f < 1) throw ConfigError("non-positive 2D filter count");
    for (int f : filters_3d)
      if (f < 1) throw ConfigError("non-positive 3D filter count");
    for (int u : head_units)
      if (u < 1) throw ConfigError("non-positive head width");
    if (reduction_filters < 1 || reduction_spectral_stride < 1) {
      throw ConfigError("invalid reduction configuration");
    }
  }
};

inline constexpr std::array<std::int64_t, 3> kSpectralKernels1d{9, 7, 5};
inline constexpr std::int64_t kPoolWindow = 2;
inline constexpr std::array<std::int64_t, 2> kSpectralKernels3d{9, 5};

// --- shape tracing -------------------------------------------------------------

struct FeatureDims {
  std::int64_t d1 = 0, d2 = 0, d3 = 0;
  std::int64_t total() const { return d1 + d2 + d3; }
};

namespace detail {

inline std::int64_t trace_1d(const MBConfig& cfg) {
  std::int64_t len = cfg.bands;
  for (std::size_t i = 0; i < 3; ++i) {
    try {
      len = conv_out_extent(len, kSpectralKernels1d[i], 1, Padding::valid);
      if (kPoolWindow > len) {
        throw ShapeError("pool window " + std::to_string(kPoolWindow) +
                         " exceeds input length " + std::to_string(len));
      }
      len /= kPoolWindow;
    } catch (const ShapeError& e) {
      throw ConfigError("1D branch block " + std::to_string(i + 1) + " for " +
                        std::to_string(cfg.bands) + " bands: " + e.what());
    }
  }
  return len * cfg.filters_1d[2];
}

inline std::int64_t trace_2d(const MBConfig& cfg) {
  // same padding keeps the spatial extent at p x p
  return cfg.patch * cfg.patch * cfg.filters_2d.back();
}

struct ReducedDims {
  std::int64_t side = 0, spectral = 0, features = 0;
};

inline ReducedDims trace_reduction(const MBConfig& cfg) {
  ReducedDims r;
  std::int64_t side = cfg.patch, spectral = cfg.bands;
  for (std::size_t i = 0; i < 2; ++i) {
    try {
      side = conv_out_extent(side, 2, 1, Padding::valid);
      spectral = conv_out_extent(spectral, kSpectralKernels3d[i], cfg.reduction_spectral_stride,
                                 Padding::valid);
    } catch (const ShapeError& e) {
      throw ConfigError("3D-branch reduction layer " + std::to_string(i + 1) + " for patch " +
                        std::to_string(cfg.patch) + ", " + std::to_string(cfg.bands) +
                        " bands: " + e.what());
    }
  }
  r.side = side;
  r.spectral = spectral;
  r.features = side * side * spectral * cfg.reduction_filters;
  return r;
}

inline std::int64_t trace_3d(const MBConfig& cfg) {
  // extraction keeps p x p x lambda under same padding
  if (cfg.variant == Variant::mb) {
    return cfg.patch * cfg.patch * cfg.bands * cfg.filters_3d[5];
  }
  const std::int64_t reduced = trace_reduction(cfg).features;
  if (cfg.variant == Variant::mb_res) {
    return cfg.patch * cfg.patch * cfg.bands + reduced;  // raw patch ahead of reduced features
  }
  return reduced;
}

}  // namespace detail

// Pure shape computation; no weights are allocated. Disabled branches report 0.
inline FeatureDims feature_dims(const MBConfig& cfg) {
  cfg.validate();
  FeatureDims d;
  if (cfg.branch_enabled(BranchKind::spectral_1d)) d.d1 = detail::trace_1d(cfg);
  if (cfg.branch_enabled(BranchKind::spatial_2d)) d.d2 = detail::trace_2d(cfg);
  if (cfg.branch_enabled(BranchKind::volumetric_3d)) d.d3 = detail::trace_3d(cfg);
  return d;
}

// --- layers ----------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  int spatial_rank = 1;
  ParameterT<T> kernels, bias;
  Padding padding = Padding::valid;
  std::vector<std::int64_t> stride;
};

template <typename T>
struct DenseLayer {
  ParameterT<T> weights, bias;
};

struct PoolLayer {
  std::int64_t window = kPoolWindow;
};
struct ReluLayer {};
struct FlattenLayer {};

template <typename T>
using Layer = std::variant<ConvLayer<T>, DenseLayer<T>, PoolLayer, ReluLayer, FlattenLayer>;

template <typename T>
struct Sequential {
  std::vector<Layer<T>> layers;

  TensorT<T> apply(TensorT<T> x) const {
    for (const auto& layer : layers) {
      x = std::visit(
          [&x](const auto& l) -> TensorT<T> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvLayer<T>>) {
              return conv_forward(x, l.kernels.value, l.bias.value, l.padding, l.stride);
            } else if constexpr (std::is_same_v<L, DenseLayer<T>>) {
              return dense_forward(x, l.weights.value, l.bias.value);
            } else if constexpr (std::is_same_v<L, PoolLayer>) {
              return maxpool1d_forward(x, l.window).first;
            } else if constexpr (std::is_same_v<L, ReluLayer>) {
              return relu_forward(x);
            } else {
              return std::move(x).reshaped(Shape{x.extent(0), shape_size(x.shape()) / x.extent(0)});
            }
          },
          layer);
    }
    return x;
  }

  VarT<T> apply(TapeT<T>& tape, VarT<T> x) {
    for (auto& layer : layers) {
      x = std::visit(
          [&tape, x](auto& l) -> VarT<T> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvLayer<T>>) {
              switch (l.spatial_rank) {
                case 1: return conv1d(x, l.kernels, l.bias, l.padding, l.stride[0]);
                case 2:
                  return conv2d(x, l.kernels, l.bias, l.padding, {l.stride[0], l.stride[1]});
                default:
                  return conv3d(x, l.kernels, l.bias, l.padding,
                                {l.stride[0], l.stride[1], l.stride[2]});
              }
            } else if constexpr (std::is_same_v<L, DenseLayer<T>>) {
              return dense(x, l.weights, l.bias);
            } else if constexpr (std::is_same_v<L, PoolLayer>) {
              return maxpool1d(x, l.window);
            } else if constexpr (std::is_same_v<L, ReluLayer>) {
              return relu(x);
            } else {
              return flatten_batch(x);
            }
          },
          layer);
    }
    return x;
  }

  void collect_params(std::vector<ParameterT<T>*>& out) {
    for (auto& layer : layers) {
      std::visit(
          [&out](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConvLayer<T>>) {
              out.push_back(&l.kernels);
              out.push_back(&l.bias);
            } else if constexpr (std::is_same_v<L, DenseLayer<T>>) {
              out.push_back(&l.weights);
              out.push_back(&l.bias);
            }
          },
          layer);
    }
  }
};

namespace detail {

// He-style fan-in uniform init; biases start at zero. Draws are made in double
// and cast so float and double instantiations see the same stream.
template <typename T>
ParameterT<T> he_uniform(Rng& rng, Shape shape, std::int64_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  TensorT<T> v(std::move(shape));
  for (std::int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rng.uniform(-limit, limit));
  return ParameterT<T>(std::move(v));
}

template <typename T>
ConvLayer<T> make_conv(Rng& rng, std::int64_t cin, std::int64_t cout,
                       std::vector<std::int64_t> kernel, Padding pad,
                       std::vector<std::int64_t> stride) {
  ConvLayer<T> l;
  l.spatial_rank = static_cast<int>(kernel.size());
  Shape kshape{cout, cin};
  std::int64_t kvol = 1;
  for (std::int64_t k : kernel) {
    kshape.push_back(k);
    kvol *= k;
  }
  l.kernels = he_uniform<T>(rng, std::move(kshape), cin * kvol);
  l.bias = ParameterT<T>(TensorT<T>(Shape{cout}));
  l.padding = pad;
  l.stride = std::move(stride);
  return l;
}

template <typename T>
DenseLayer<T> make_dense(Rng& rng, std::int64_t in, std::int64_t out) {
  return DenseLayer<T>{he_uniform<T>(rng, Shape{out, in}, in),
                       ParameterT<T>(TensorT<T>(Shape{out}))};
}

}  // namespace detail

// --- branch builders --------------------------------------------------------------

// Spectral branch over the reshaped p^2 x lambda view: three blocks of
// [conv1d(9|7|5, valid) -> ReLU -> maxpool(2)], then flatten.
template <typename T>
Sequential<T> build_1d_branch(const MBConfig& cfg, Rng& rng) {
  detail::trace_1d(cfg);  // shape feasibility first
  Sequential<T> seq;
  std::int64_t ch = cfg.patch * cfg.patch;
  for (std::size_t i = 0; i < 3; ++i) {
    seq.layers.push_back(
        detail::make_conv<T>(rng, ch, cfg.filters_1d[i], {kSpectralKernels1d[i]}, Padding::valid, {1}));
    seq.layers.push_back(ReluLayer{});
    seq.layers.push_back(PoolLayer{kPoolWindow});
    ch = cfg.filters_1d[i];
  }
  seq.layers.push_back(FlattenLayer{});
  return seq;
}

// Spatial branch: bands become input channels over the p x p window; stacked
// [conv2d(2x2, same) -> ReLU] layers, then flatten.
template <typename T>
Sequential<T> build_2d_branch(const MBConfig& cfg, Rng& rng) {
  Sequential<T> seq;
  std::int64_t ch = cfg.bands;
  for (int f : cfg.filters_2d) {
    seq.layers.push_back(detail::make_conv<T>(rng, ch, f, {2, 2}, Padding::same, {1, 1}));
    seq.layers.push_back(ReluLayer{});
    ch = f;
  }
  seq.layers.push_back(FlattenLayer{});
  return seq;
}

// Two unpadded strided convolutions that shrink the 3D feature volume to the
// order of the other branches' outputs.
template <typename T>
void apply_dimensionality_reduction(Sequential<T>& branch, const MBConfig& cfg, Rng& rng) {
  detail::trace_reduction(cfg);
  std::int64_t ch = cfg.filters_3d[5];
  for (std::size_t i = 0; i < 2; ++i) {
    branch.layers.push_back(detail::make_conv<T>(rng, ch, cfg.reduction_filters,
                                                 {2, 2, kSpectralKernels3d[i]}, Padding::valid,
                                                 {1, 1, cfg.reduction_spectral_stride}));
    branch.layers.push_back(ReluLayer{});
    ch = cfg.reduction_filters;
  }
}

// Spectral-spatial branch over the 1 x p x p x lambda volume: three blocks of
// [conv3d(2x2x9, same) -> ReLU -> conv3d(2x2x5, same) -> ReLU]; MB flattens
// directly, MB-DR/MB-Res append the reduction tail first. The MB-Res skip
// connection (raw patch concatenated ahead of the reduced features) is fused
// at the network level where the raw input is in scope.
template <typename T>
Sequential<T> build_3d_branch(const MBConfig& cfg, Rng& rng) {
  Sequential<T> seq;
  std::int64_t ch = 1;
  for (std::size_t block = 0; block < 3; ++block) {
    for (std::size_t j = 0; j < 2; ++j) {
      const int f = cfg.filters_3d[2 * block + j];
      seq.layers.push_back(
          detail::make_conv<T>(rng, ch, f, {2, 2, kSpectralKernels3d[j]}, Padding::same, {1, 1, 1}));
      seq.layers.push_back(ReluLayer{});
      ch = f;
    }
  }
  if (cfg.variant != Variant::mb) apply_dimensionality_reduction(seq, cfg, rng);
  seq.layers.push_back(FlattenLayer{});
  return seq;
}

template <typename T>
Sequential<T> build_head(const MBConfig& cfg, Rng& rng, std::int64_t in_dim) {
  Sequential<T> seq;
  std::int64_t prev = in_dim;
  for (int u : cfg.head_units) {
    seq.layers.push_back(detail::make_dense<T>(rng, prev, u));
    seq.layers.push_back(ReluLayer{});
    prev = u;
  }
  seq.layers.push_back(detail::make_dense<T>(rng, prev, cfg.endmembers));  // linear output
  return seq;
}

// --- network -----------------------------------------------------------------------

template <typename T>
struct NetworkT {
  MBConfig cfg;
  Sequential<T> branch_1d, branch_2d, branch_3d;
  Sequential<T> head;

  std::vector<ParameterT<T>*> params() {
    std::vector<ParameterT<T>*> out;
    branch_1d.collect_params(out);
    branch_2d.collect_params(out);
    branch_3d.collect_params(out);
    head.collect_params(out);
    return out;
  }

  std::vector<ParameterT<T>*> branch_params(BranchKind b) {
    std::vector<ParameterT<T>*> out;
    switch (b) {
      case BranchKind::spectral_1d: branch_1d.collect_params(out); break;
      case BranchKind::spatial_2d: branch_2d.collect_params(out); break;
      case BranchKind::volumetric_3d: branch_3d.collect_params(out); break;
    }
    return out;
  }

  std::vector<ParameterT<T>*> head_params() {
    std::vector<ParameterT<T>*> out;
    head.collect_params(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // Recorded forward pass for training: patches [B, p, p, lambda] -> [B, c].
  VarT<T> forward(TapeT<T>& tape, TensorT<T> patches) {
    check_input(patches.shape(), true);
    const std::int64_t b = patches.extent(0);
    VarT<T> in = tape.input(std::move(patches));
    std::vector<VarT<T>> feats;
    if (cfg.branch_enabled(BranchKind::spectral_1d)) {
      feats.push_back(
          branch_1d.apply(tape, reshape(in, {b, cfg.patch * cfg.patch, cfg.bands})));
    }
    if (cfg.branch_enabled(BranchKind::spatial_2d)) {
      feats.push_back(branch_2d.apply(tape, permute(in, {0, 3, 1, 2})));
    }
    if (cfg.branch_enabled(BranchKind::volumetric_3d)) {
      VarT<T> f = branch_3d.apply(tape, reshape(in, {b, 1, cfg.patch, cfg.patch, cfg.bands}));
      if (cfg.variant == Variant::mb_res) {
        const std::array<VarT<T>, 2> parts{flatten_batch(in), f};
        f = concat<T>(parts);
      }
      feats.push_back(f);
    }
    VarT<T> fused = feats.size() == 1 ? feats[0] : concat<T>(std::span<const VarT<T>>(feats));
    return head.apply(tape, fused);
  }

  // Read-only inference; safe to call from multiple threads on a frozen net.
  // Accepts [B, p, p, lambda] or a single [p, p, lambda] patch.
  TensorT<T> predict(const TensorT<T>& patches) const {
    if (patches.rank() == 3) {
      TensorT<T> one = patches.reshaped(
          {1, patches.extent(0), patches.extent(1), patches.extent(2)});
      return predict(one).reshaped({cfg.endmembers});
    }
    check_input(patches.shape(), true);
    const std::int64_t b = patches.extent(0);
    constexpr std::int64_t kChunk = 256;  // bounds activation memory
    if (b > kChunk) {
      TensorT<T> out(Shape{b, cfg.endmembers});
      for (std::int64_t at = 0; at < b; at += kChunk) {
        const std::int64_t n = std::min(kChunk, b - at);
        TensorT<T> slice(Shape{n, cfg.patch, cfg.patch, cfg.bands});
        std::memcpy(slice.data(), patches.data() + at * cfg.patch * cfg.patch * cfg.bands,
                    static_cast<std::size_t>(slice.size()) * sizeof(T));
        TensorT<T> part = predict(slice);
        std::memcpy(out.data() + at * cfg.endmembers, part.data(),
                    static_cast<std::size_t>(part.size()) * sizeof(T));
      }
      return out;
    }
    std::vector<TensorT<T>> feats = branch_features(patches);
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(feats.size());
    for (const auto& f : feats) ptrs.push_back(&f);
    TensorT<T> fused = feats.size() == 1 ? std::move(feats[0]) : concat_forward<T>(ptrs);
    return head.apply(std::move(fused));
  }

  // Flattened per-branch outputs in branch order, before head fusion.
  std::vector<TensorT<T>> branch_features(const TensorT<T>& patches) const {
    check_input(patches.shape(), true);
    const std::int64_t b = patches.extent(0);
    std::vector<TensorT<T>> feats;
    if (cfg.branch_enabled(BranchKind::spectral_1d)) {
      feats.push_back(
          branch_1d.apply(patches.reshaped({b, cfg.patch * cfg.patch, cfg.bands})));
    }
    if (cfg.branch_enabled(BranchKind::spatial_2d)) {
      feats.push_back(branch_2d.apply(permute_forward(patches, std::array<int, 4>{0, 3, 1, 2})));
    }
    if (cfg.branch_enabled(BranchKind::volumetric_3d)) {
      TensorT<T> f =
          branch_3d.apply(patches.reshaped({b, 1, cfg.patch, cfg.patch, cfg.bands}));
      if (cfg.variant == Variant::mb_res) {
        TensorT<T> raw = patches.reshaped({b, cfg.patch * cfg.patch * cfg.bands});
        const std::array<const TensorT<T>*, 2> parts{&raw, &f};
        f = concat_forward<T>(parts);
      }
      feats.push_back(std::move(f));
    }
    return feats;
  }

 private:
  void check_input(const Shape& s, bool batched) const {
    const std::size_t off = batched ? 1 : 0;
    if (s.size() != 3 + off || s[off] != cfg.patch || s[off + 1] != cfg.patch ||
        s[off + 2] != cfg.bands) {
      throw ShapeError("expected patches of shape [B," + std::to_string(cfg.patch) + "," +
                       std::to_string(cfg.patch) + "," + std::to_string(cfg.bands) + "], got " +
                       shape_str(s));
    }
  }
};

using Network = NetworkT<float>;

template <typename T = float>
NetworkT<T> build_model(const MBConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const FeatureDims dims = feature_dims(cfg);  // fails fast on infeasible shapes
  Rng rng(derive_seed(seed, "init"));
  NetworkT<T> net;
  net.cfg = cfg;
  if (cfg.branch_enabled(BranchKind::spectral_1d)) net.branch_1d = build_1d_branch<T>(cfg, rng);
  if (cfg.branch_enabled(BranchKind::spatial_2d)) net.branch_2d = build_2d_branch<T>(cfg, rng);
  if (cfg.branch_enabled(BranchKind::volumetric_3d)) net.branch_3d = build_3d_branch<T>(cfg, rng);
  net.head = build_head<T>(cfg, rng, dims.total());
  return net;
}

// Exact value copy between instantiations (float net -> double twin in tests).
template <typename T, typename U>
void copy_params(NetworkT<T>& dst, const NetworkT<U>& src) {
  auto& s = const_cast<NetworkT<U>&>(src);
  auto dp = dst.params();
  auto sp = s.params();
  if (dp.size() != sp.size()) throw ShapeError("parameter lists differ in length");
  for (std::size_t i = 0; i < dp.size(); ++i) {
    dp[i]->value = sp[i]->value.template cast<T>();
  }
}

}  // namespace unmix
