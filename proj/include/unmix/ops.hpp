#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

enum class Padding { valid, same };

// Geometry of an N-d cross-correlation, canonicalized to three spatial axes
// (dummy leading axes of extent 1 for the 1-d and 2-d cases, so one kernel
// implementation serves all three).
struct ConvGeom {
  int spatial_rank = 0;
  bool batched = false;
  std::int64_t batch = 1, cin = 0, cout = 0;
  std::array<std::int64_t, 3> in{1, 1, 1}, kernel{1, 1, 1}, stride{1, 1, 1}, out{1, 1, 1},
      pad_lo{0, 0, 0};
  std::int64_t in_vol = 0, out_vol = 0, kvol = 0, cols = 0;

  Shape output_shape() const {
    Shape s;
    if (batched) s.push_back(batch);
    s.push_back(cout);
    for (int a = 3 - spatial_rank; a < 3; ++a) s.push_back(out[static_cast<std::size_t>(a)]);
    return s;
  }
};

// Output extent for one axis. valid: floor((L-k)/s)+1, kernel must fit.
// same: ceil(L/s), zero padding, extra zero on the left when asymmetric.
inline std::int64_t conv_out_extent(std::int64_t len, std::int64_t k, std::int64_t stride,
                                    Padding pad, std::int64_t* pad_lo = nullptr) {
  if (stride < 1) throw ShapeError("stride must be >= 1, got " + std::to_string(stride));
  if (k < 1) throw ShapeError("kernel extent must be >= 1, got " + std::to_string(k));
  if (pad == Padding::valid) {
    if (k > len) {
      throw ShapeError("kernel extent " + std::to_string(k) + " exceeds input extent " +
                       std::to_string(len));
    }
    if (pad_lo) *pad_lo = 0;
    return (len - k) / stride + 1;
  }
  const std::int64_t out = (len + stride - 1) / stride;
  const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * stride + k - len);
  if (pad_lo) *pad_lo = (total + 1) / 2;
  if (k > len + total) {
    throw ShapeError("kernel extent " + std::to_string(k) + " exceeds padded input");
  }
  return out;
}

inline ConvGeom resolve_conv(const Shape& x, const Shape& w, Padding pad,
                             std::span<const std::int64_t> stride) {
  ConvGeom g;
  g.spatial_rank = static_cast<int>(w.size()) - 2;
  if (g.spatial_rank < 1 || g.spatial_rank > 3) {
    throw ShapeError("kernel tensor must have rank 3..5, got shape " + shape_str(w));
  }
  const int xr = static_cast<int>(x.size());
  if (xr == g.spatial_rank + 2) {
    g.batched = true;
    g.batch = x[0];
  } else if (xr != g.spatial_rank + 1) {
    throw ShapeError("input " + shape_str(x) + " incompatible with kernels " + shape_str(w));
  }
  g.cout = w[0];
  g.cin = w[1];
  const std::int64_t x_cin = x[g.batched ? 1 : 0];
  if (x_cin != g.cin) {
    throw ShapeError("input channels " + std::to_string(x_cin) + " != kernel channels " +
                     std::to_string(g.cin));
  }
  if (static_cast<int>(stride.size()) != g.spatial_rank) {
    throw ShapeError("expected " + std::to_string(g.spatial_rank) + " strides");
  }
  for (int a = 0; a < g.spatial_rank; ++a) {
    const std::size_t c = static_cast<std::size_t>(3 - g.spatial_rank + a);  // canonical axis
    g.in[c] = x[static_cast<std::size_t>((g.batched ? 2 : 1) + a)];
    g.kernel[c] = w[static_cast<std::size_t>(2 + a)];
    g.stride[c] = stride[static_cast<std::size_t>(a)];
    g.out[c] = conv_out_extent(g.in[c], g.kernel[c], g.stride[c], pad, &g.pad_lo[c]);
  }
  g.in_vol = g.in[0] * g.in[1] * g.in[2];
  g.out_vol = g.out[0] * g.out[1] * g.out[2];
  g.kvol = g.kernel[0] * g.kernel[1] * g.kernel[2];
  g.cols = g.cin * g.kvol;
  return g;
}

namespace detail {

template <typename T>
std::vector<T>& scratch(int slot, std::size_t n) {
  thread_local std::vector<T> bufs[4];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b;
}

// Patch-matrix rows for samples [b0, b1): row per output position, columns
// grouped channel-major then kernel offset. Padded positions become zeros.
template <typename T>
void im2col(const T* x, const ConvGeom& g, std::int64_t b0, std::int64_t b1, T* p) {
  const auto& in = g.in;
  const auto& k = g.kernel;
  for (std::int64_t b = b0; b < b1; ++b) {
    const T* xs = x + b * g.cin * g.in_vol;
    for (std::int64_t o0 = 0; o0 < g.out[0]; ++o0) {
      const std::int64_t i0base = o0 * g.stride[0] - g.pad_lo[0];
      for (std::int64_t o1 = 0; o1 < g.out[1]; ++o1) {
        const std::int64_t i1base = o1 * g.stride[1] - g.pad_lo[1];
        for (std::int64_t o2 = 0; o2 < g.out[2]; ++o2) {
          const std::int64_t i2base = o2 * g.stride[2] - g.pad_lo[2];
          const std::int64_t r2lo = std::max<std::int64_t>(0, -i2base);
          const std::int64_t r2hi = std::min<std::int64_t>(k[2], in[2] - i2base);
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            const T* xc = xs + ci * g.in_vol;
            for (std::int64_t k0 = 0; k0 < k[0]; ++k0) {
              const std::int64_t i0 = i0base + k0;
              if (i0 < 0 || i0 >= in[0]) {
                std::fill(p, p + k[1] * k[2], T(0));
                p += k[1] * k[2];
                continue;
              }
              for (std::int64_t k1 = 0; k1 < k[1]; ++k1) {
                const std::int64_t i1 = i1base + k1;
                if (i1 < 0 || i1 >= in[1] || r2lo >= r2hi) {
                  std::fill(p, p + k[2], T(0));
                  p += k[2];
                  continue;
                }
                const T* src = xc + (i0 * in[1] + i1) * in[2] + i2base;
                std::fill(p, p + r2lo, T(0));
                std::memcpy(p + r2lo, src + r2lo, static_cast<std::size_t>(r2hi - r2lo) * sizeof(T));
                std::fill(p + r2hi, p + k[2], T(0));
                p += k[2];
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch-matrix gradients back onto dx.
template <typename T>
void col2im_add(const T* p, const ConvGeom& g, std::int64_t b0, std::int64_t b1, T* dx) {
  const auto& in = g.in;
  const auto& k = g.kernel;
  for (std::int64_t b = b0; b < b1; ++b) {
    T* xs = dx + b * g.cin * g.in_vol;
    for (std::int64_t o0 = 0; o0 < g.out[0]; ++o0) {
      const std::int64_t i0base = o0 * g.stride[0] - g.pad_lo[0];
      for (std::int64_t o1 = 0; o1 < g.out[1]; ++o1) {
        const std::int64_t i1base = o1 * g.stride[1] - g.pad_lo[1];
        for (std::int64_t o2 = 0; o2 < g.out[2]; ++o2) {
          const std::int64_t i2base = o2 * g.stride[2] - g.pad_lo[2];
          const std::int64_t r2lo = std::max<std::int64_t>(0, -i2base);
          const std::int64_t r2hi = std::min<std::int64_t>(k[2], in[2] - i2base);
          for (std::int64_t ci = 0; ci < g.cin; ++ci) {
            T* xc = xs + ci * g.in_vol;
            for (std::int64_t k0 = 0; k0 < k[0]; ++k0) {
              const std::int64_t i0 = i0base + k0;
              if (i0 < 0 || i0 >= in[0]) {
                p += k[1] * k[2];
                continue;
              }
              for (std::int64_t k1 = 0; k1 < k[1]; ++k1) {
                const std::int64_t i1 = i1base + k1;
                if (i1 < 0 || i1 >= in[1] || r2lo >= r2hi) {
                  p += k[2];
                  continue;
                }
                T* dst = xc + (i0 * in[1] + i1) * in[2] + i2base;
                for (std::int64_t k2 = r2lo; k2 < r2hi; ++k2) dst[k2] += p[k2];
                p += k[2];
              }
            }
          }
        }
      }
    }
  }
}

inline std::int64_t conv_chunk_samples(const ConvGeom& g, std::size_t elem_size) {
  constexpr std::size_t kBudget = 32u << 20;  // patch-matrix scratch cap
  const std::size_t per_sample =
      static_cast<std::size_t>(g.out_vol * g.cols) * elem_size;
  const std::int64_t n = static_cast<std::int64_t>(kBudget / std::max<std::size_t>(per_sample, 1));
  return std::clamp<std::int64_t>(n, 1, g.batch);
}

}  // namespace detail

template <typename T>
TensorT<T> conv_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                        Padding pad, std::span<const std::int64_t> stride) {
  const ConvGeom g = resolve_conv(x.shape(), w.shape(), pad, stride);
  if (b.size() != g.cout) {
    throw ShapeError("bias length " + std::to_string(b.size()) + " != output channels " +
                     std::to_string(g.cout));
  }
  if (!x.all_finite()) throw NumericError("conv input contains non-finite values");
  TensorT<T> y(g.output_shape());
  const auto wmat = w.mat(g.cout, g.cols);
  const auto bias = b.vec();
  const std::int64_t chunk = detail::conv_chunk_samples(g, sizeof(T));
  auto& pbuf = detail::scratch<T>(0, static_cast<std::size_t>(chunk * g.out_vol * g.cols));
  auto& obuf = detail::scratch<T>(1, static_cast<std::size_t>(chunk * g.out_vol * g.cout));
  for (std::int64_t b0 = 0; b0 < g.batch; b0 += chunk) {
    const std::int64_t b1 = std::min(g.batch, b0 + chunk);
    const std::int64_t rows = (b1 - b0) * g.out_vol;
    detail::im2col(x.data(), g, b0, b1, pbuf.data());
    MatMap<T> p(pbuf.data(), rows, g.cols);
    MatMap<T> o(obuf.data(), rows, g.cout);
    o.noalias() = p * wmat.transpose();
    for (std::int64_t s = b0; s < b1; ++s) {
      MatMap<T> ys(y.data() + s * g.cout * g.out_vol, g.cout, g.out_vol);
      ys = o.middleRows((s - b0) * g.out_vol, g.out_vol).transpose();
      ys.colwise() += bias;
    }
  }
  return y;
}

// Accumulates (+=) into whichever of dx, dw, db are non-null.
template <typename T>
void conv_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                   Padding pad, std::span<const std::int64_t> stride, TensorT<T>* dx,
                   TensorT<T>* dw, TensorT<T>* db) {
  const ConvGeom g = resolve_conv(x.shape(), w.shape(), pad, stride);
  if (dy.shape() != g.output_shape()) {
    throw ShapeError("conv output gradient has shape " + shape_str(dy.shape()) + ", expected " +
                     shape_str(g.output_shape()));
  }
  if (db) {
    auto dbv = db->vec();
    for (std::int64_t s = 0; s < g.batch; ++s) {
      ConstMatMap<T> dys(dy.data() + s * g.cout * g.out_vol, g.cout, g.out_vol);
      dbv += dys.rowwise().sum();
    }
  }
  if (!dw && !dx) return;
  const auto wmat = w.mat(g.cout, g.cols);
  const std::int64_t chunk = detail::conv_chunk_samples(g, sizeof(T));
  auto& pbuf = detail::scratch<T>(0, dw ? static_cast<std::size_t>(chunk * g.out_vol * g.cols) : 0);
  auto& ybuf = detail::scratch<T>(1, static_cast<std::size_t>(chunk * g.out_vol * g.cout));
  auto& dpbuf = detail::scratch<T>(2, dx ? static_cast<std::size_t>(chunk * g.out_vol * g.cols) : 0);
  for (std::int64_t b0 = 0; b0 < g.batch; b0 += chunk) {
    const std::int64_t b1 = std::min(g.batch, b0 + chunk);
    const std::int64_t rows = (b1 - b0) * g.out_vol;
    MatMap<T> dyc(ybuf.data(), rows, g.cout);
    for (std::int64_t s = b0; s < b1; ++s) {
      ConstMatMap<T> dys(dy.data() + s * g.cout * g.out_vol, g.cout, g.out_vol);
      dyc.middleRows((s - b0) * g.out_vol, g.out_vol) = dys.transpose();
    }
    if (dw) {
      detail::im2col(x.data(), g, b0, b1, pbuf.data());
      MatMap<T> p(pbuf.data(), rows, g.cols);
      dw->mat(g.cout, g.cols).noalias() += dyc.transpose() * p;
    }
    if (dx) {
      MatMap<T> dp(dpbuf.data(), rows, g.cols);
      dp.noalias() = dyc * wmat;
      detail::col2im_add(dpbuf.data(), g, b0, b1, dx->data());
    }
  }
}

// --- max pooling over the trailing axis -------------------------------------

// Non-overlapping windows, stride == window, trailing remainder dropped.
template <typename T>
std::pair<TensorT<T>, std::vector<std::int64_t>> maxpool1d_forward(const TensorT<T>& x,
                                                                   std::int64_t window) {
  if (x.rank() < 1) throw ShapeError("maxpool1d requires rank >= 1");
  if (window < 1) throw ShapeError("pool window must be >= 1");
  const std::int64_t len = x.extent(x.rank() - 1);
  if (window > len) {
    throw ShapeError("pool window " + std::to_string(window) + " exceeds input length " +
                     std::to_string(len));
  }
  const std::int64_t out_len = len / window;
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  TensorT<T> y(out_shape);
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.size()));
  const std::int64_t rows = x.size() / len;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * len;
    T* yr = y.data() + r * out_len;
    for (std::int64_t j = 0; j < out_len; ++j) {
      std::int64_t best = j * window;
      for (std::int64_t i = best + 1; i < (j + 1) * window; ++i) {
        if (xr[i] > xr[best]) best = i;  // ties keep the first index
      }
      yr[j] = xr[best];
      argmax[static_cast<std::size_t>(r * out_len + j)] = r * len + best;
    }
  }
  return {std::move(y), std::move(argmax)};
}

template <typename T>
void maxpool1d_backward(const std::vector<std::int64_t>& argmax, const TensorT<T>& dy,
                        TensorT<T>& dx) {
  for (std::int64_t i = 0; i < dy.size(); ++i) dx[argmax[static_cast<std::size_t>(i)]] += dy[i];
}

// --- dense -------------------------------------------------------------------

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (w.rank() != 2) throw ShapeError("dense weights must be rank 2");
  const std::int64_t m = w.extent(0), n = w.extent(1);
  const bool batched = x.rank() == 2;
  if (x.rank() < 1 || x.rank() > 2 || x.extent(x.rank() - 1) != n) {
    throw ShapeError("dense input " + shape_str(x.shape()) + " incompatible with weights " +
                     shape_str(w.shape()));
  }
  if (b.size() != m) throw ShapeError("dense bias length mismatch");
  const std::int64_t rows = batched ? x.extent(0) : 1;
  TensorT<T> y(batched ? Shape{rows, m} : Shape{m});
  auto ymat = y.mat(rows, m);
  ymat.noalias() = x.mat(rows, n) * w.mat(m, n).transpose();
  ymat.rowwise() += b.vec().transpose();
  return y;
}

template <typename T>
void dense_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& dy,
                    TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* db) {
  const std::int64_t m = w.extent(0), n = w.extent(1);
  const std::int64_t rows = x.size() / n;
  auto dymat = dy.mat(rows, m);
  if (dw) dw->mat(m, n).noalias() += dymat.transpose() * x.mat(rows, n);
  if (db) db->vec() += dymat.colwise().sum().transpose();
  if (dx) dx->mat(rows, n).noalias() += dymat * w.mat(m, n);
}

// --- elementwise / structural --------------------------------------------------

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> y(x.shape());
  y.array() = x.array().max(T(0));
  return y;
}

// Subgradient at 0 is 0: only strictly positive inputs pass gradient.
template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& dy, TensorT<T>& dx) {
  dx.array() += (x.array() > T(0)).template cast<T>() * dy.array();
}

// Concatenation along the trailing axis; leading extents must agree.
template <typename T>
TensorT<T> concat_forward(std::span<const TensorT<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat of an empty part list");
  const int rank = parts[0]->rank();
  if (rank < 1) throw ShapeError("concat parts must have rank >= 1");
  std::int64_t total = 0;
  for (const auto* p : parts) {
    if (p->rank() != rank) throw ShapeError("concat parts differ in rank");
    for (int a = 0; a + 1 < rank; ++a) {
      if (p->extent(a) != parts[0]->extent(a)) {
        throw ShapeError("concat parts differ in leading extents");
      }
    }
    total += p->extent(rank - 1);
  }
  Shape out_shape = parts[0]->shape();
  out_shape.back() = total;
  TensorT<T> y(out_shape);
  const std::int64_t rows = y.size() / total;
  std::int64_t offset = 0;
  for (const auto* p : parts) {
    const std::int64_t d = p->extent(rank - 1);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::memcpy(y.data() + r * total + offset, p->data() + r * d,
                  static_cast<std::size_t>(d) * sizeof(T));
    }
    offset += d;
  }
  return y;
}

// Mean squared error with double-precision accumulation.
template <typename T>
double mse_value(const TensorT<T>& pred, const TensorT<T>& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse shapes differ: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (pred.size() == 0) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

template <typename T>
void mse_backward(const TensorT<T>& pred, const TensorT<T>& target, T upstream,
                  TensorT<T>& dpred) {
  const T scale = T(2) * upstream / static_cast<T>(pred.size());
  dpred.array() += scale * (pred.array() - target.array());
}

// General axis permutation: out axis i takes input axis perm[i].
template <typename T>
TensorT<T> permute_forward(const TensorT<T>& x, std::span<const int> perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("permutation rank mismatch");
  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(rank), 1);
  for (int a = rank - 2; a >= 0; --a) {
    in_strides[static_cast<std::size_t>(a)] =
        in_strides[static_cast<std::size_t>(a + 1)] * x.extent(a + 1);
  }
  std::vector<std::int64_t> gather_strides(static_cast<std::size_t>(rank));
  for (int a = 0; a < rank; ++a) {
    out_shape[static_cast<std::size_t>(a)] = x.extent(perm[static_cast<std::size_t>(a)]);
    gather_strides[static_cast<std::size_t>(a)] =
        in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(a)])];
  }
  TensorT<T> y(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < y.size(); ++i) {
    y[i] = x[src];
    for (int a = rank - 1; a >= 0; --a) {
      auto ua = static_cast<std::size_t>(a);
      if (++idx[ua] < out_shape[ua]) {
        src += gather_strides[ua];
        break;
      }
      src -= gather_strides[ua] * (out_shape[ua] - 1);
      idx[ua] = 0;
    }
  }
  return y;
}

inline std::vector<int> inverse_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

// --- spec-named plain forms ----------------------------------------------------

template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const ParameterT<T>& kernels, const ParameterT<T>& bias,
                  Padding pad, std::int64_t stride = 1) {
  if (kernels.value.rank() != 3) throw ShapeError("conv1d kernels must be rank 3");
  const std::array<std::int64_t, 1> s{stride};
  return conv_forward(x, kernels.value, bias.value, pad, s);
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const ParameterT<T>& kernels, const ParameterT<T>& bias,
                  Padding pad, std::array<std::int64_t, 2> stride = {1, 1}) {
  if (kernels.value.rank() != 4) throw ShapeError("conv2d kernels must be rank 4");
  return conv_forward(x, kernels.value, bias.value, pad, stride);
}

template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const ParameterT<T>& kernels, const ParameterT<T>& bias,
                  Padding pad, std::array<std::int64_t, 3> stride = {1, 1, 1}) {
  if (kernels.value.rank() != 5) throw ShapeError("conv3d kernels must be rank 5");
  return conv_forward(x, kernels.value, bias.value, pad, stride);
}

template <typename T>
TensorT<T> maxpool1d(const TensorT<T>& x, std::int64_t window) {
  return maxpool1d_forward(x, window).first;
}

template <typename T>
TensorT<T> dense(const TensorT<T>& x, const ParameterT<T>& weights, const ParameterT<T>& bias) {
  return dense_forward(x, weights.value, bias.value);
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return relu_forward(x);
}

template <typename T>
TensorT<T> concat(std::span<const TensorT<T>* const> parts) {
  return concat_forward(parts);
}

template <typename T>
TensorT<T> mse_loss(const TensorT<T>& pred, const TensorT<T>& target) {
  return TensorT<T>::scalar(static_cast<T>(mse_value(pred, target)));
}

}  // namespace unmix
