#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "unmix/ops.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

template <typename T>
class TapeT;

// Handle to a value recorded on a tape.
template <typename T>
struct VarT {
  TapeT<T>* tape = nullptr;
  std::int32_t id = -1;

  const TensorT<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

using Var = VarT<float>;

// Reverse-mode tape. Forward ops append nodes eagerly, so creation order is a
// topological order; backward() sweeps it once in reverse. Single-writer: one
// training step records and differentiates at a time.
template <typename T>
class TapeT {
 public:
  // Leaf value. needs_grad makes the leaf itself differentiable (used by
  // gradient tests); training inputs leave it off so input gradients are
  // never materialized.
  VarT<T> input(TensorT<T> value, bool needs_grad = false) {
    return emit(std::move(value), needs_grad, PullFn{});
  }

  const TensorT<T>& value(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  bool needs_grad(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Gradient accumulated on a node during backward (zeros if untouched).
  const TensorT<T>& grad(VarT<T> v) {
    return grad_buffer(v.id);
  }

  TensorT<T>& grad_buffer(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = TensorT<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Populates grad on every trainable parameter reachable from loss; all
  // parameters in `params` are zeroed first, so unreachable ones end at zero.
  void backward(VarT<T> loss, std::span<ParameterT<T>* const> params) {
    if (loss.tape != this || loss.id < 0 ||
        loss.id >= static_cast<std::int32_t>(nodes_.size())) {
      throw std::logic_error("backward called without a recorded forward pass");
    }
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_str(value(loss.id).shape()));
    }
    for (auto* p : params) p->zero_grad();
    grad_buffer(loss.id).fill(T(1));
    for (std::int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.has_grad && n.pull) n.pull(*this, n.grad);
    }
  }

  using PullFn = std::function<void(TapeT&, const TensorT<T>&)>;

  VarT<T> emit(TensorT<T> value, bool needs_grad, PullFn pull) {
    nodes_.push_back(Node{std::move(value), TensorT<T>{}, false, needs_grad,
                          needs_grad ? std::move(pull) : PullFn{}});
    return VarT<T>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    PullFn pull;
  };
  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

template <typename T>
const TensorT<T>& VarT<T>::value() const {
  return tape->value(id);
}

namespace detail {

// Shared conv recording across the 1/2/3-d entry points. Parameters are
// captured by pointer and must outlive the tape.
template <typename T, std::size_t N>
VarT<T> record_conv(VarT<T> x, ParameterT<T>& kernels, ParameterT<T>& bias, Padding pad,
                    std::array<std::int64_t, N> stride) {
  TapeT<T>& tape = *x.tape;
  TensorT<T> y = conv_forward(x.value(), kernels.value, bias.value, pad, stride);
  const bool param_grad = kernels.trainable || bias.trainable;
  const bool xg = tape.needs_grad(x.id);
  return tape.emit(
      std::move(y), xg || param_grad,
      [xid = x.id, k = &kernels, b = &bias, pad, stride](TapeT<T>& t, const TensorT<T>& g) {
        conv_backward(t.value(xid), k->value, g, pad, stride,
                      t.needs_grad(xid) ? &t.grad_buffer(xid) : nullptr,
                      k->trainable ? &k->grad : nullptr, b->trainable ? &b->grad : nullptr);
      });
}

}  // namespace detail

template <typename T>
VarT<T> conv1d(VarT<T> x, ParameterT<T>& kernels, ParameterT<T>& bias, Padding pad,
               std::int64_t stride = 1) {
  if (kernels.value.rank() != 3) throw ShapeError("conv1d kernels must be rank 3");
  return detail::record_conv(x, kernels, bias, pad, std::array<std::int64_t, 1>{stride});
}

template <typename T>
VarT<T> conv2d(VarT<T> x, ParameterT<T>& kernels, ParameterT<T>& bias, Padding pad,
               std::array<std::int64_t, 2> stride = {1, 1}) {
  if (kernels.value.rank() != 4) throw ShapeError("conv2d kernels must be rank 4");
  return detail::record_conv(x, kernels, bias, pad, stride);
}

template <typename T>
VarT<T> conv3d(VarT<T> x, ParameterT<T>& kernels, ParameterT<T>& bias, Padding pad,
               std::array<std::int64_t, 3> stride = {1, 1, 1}) {
  if (kernels.value.rank() != 5) throw ShapeError("conv3d kernels must be rank 5");
  return detail::record_conv(x, kernels, bias, pad, stride);
}

template <typename T>
VarT<T> maxpool1d(VarT<T> x, std::int64_t window) {
  TapeT<T>& tape = *x.tape;
  auto [y, argmax] = maxpool1d_forward(x.value(), window);
  const bool xg = tape.needs_grad(x.id);
  return tape.emit(std::move(y), xg,
                   [xid = x.id, am = std::move(argmax)](TapeT<T>& t, const TensorT<T>& g) {
                     if (t.needs_grad(xid)) maxpool1d_backward(am, g, t.grad_buffer(xid));
                   });
}

template <typename T>
VarT<T> dense(VarT<T> x, ParameterT<T>& weights, ParameterT<T>& bias) {
  TapeT<T>& tape = *x.tape;
  TensorT<T> y = dense_forward(x.value(), weights.value, bias.value);
  const bool needs = tape.needs_grad(x.id) || weights.trainable || bias.trainable;
  return tape.emit(std::move(y), needs,
                   [xid = x.id, w = &weights, b = &bias](TapeT<T>& t, const TensorT<T>& g) {
                     dense_backward(t.value(xid), w->value, g,
                                    t.needs_grad(xid) ? &t.grad_buffer(xid) : nullptr,
                                    w->trainable ? &w->grad : nullptr,
                                    b->trainable ? &b->grad : nullptr);
                   });
}

template <typename T>
VarT<T> relu(VarT<T> x) {
  TapeT<T>& tape = *x.tape;
  return tape.emit(relu_forward(x.value()), tape.needs_grad(x.id),
                   [xid = x.id](TapeT<T>& t, const TensorT<T>& g) {
                     if (t.needs_grad(xid)) relu_backward(t.value(xid), g, t.grad_buffer(xid));
                   });
}

template <typename T>
VarT<T> concat(std::span<const VarT<T>> parts) {
  if (parts.empty()) throw ShapeError("concat of an empty part list");
  TapeT<T>& tape = *parts[0].tape;
  std::vector<const TensorT<T>*> values;
  std::vector<std::int32_t> ids;
  bool needs = false;
  for (const auto& p : parts) {
    values.push_back(&p.value());
    ids.push_back(p.id);
    needs = needs || tape.needs_grad(p.id);
  }
  TensorT<T> y = concat_forward<T>(values);
  return tape.emit(std::move(y), needs,
                   [ids = std::move(ids)](TapeT<T>& t, const TensorT<T>& g) {
                     const int rank = g.rank();
                     const std::int64_t total = g.extent(rank - 1);
                     const std::int64_t rows = g.size() / total;
                     std::int64_t offset = 0;
                     for (std::int32_t id : ids) {
                       const std::int64_t d = t.value(id).extent(rank - 1);
                       if (t.needs_grad(id)) {
                         TensorT<T>& dst = t.grad_buffer(id);
                         for (std::int64_t r = 0; r < rows; ++r) {
                           const T* src = g.data() + r * total + offset;
                           T* out = dst.data() + r * d;
                           for (std::int64_t i = 0; i < d; ++i) out[i] += src[i];
                         }
                       }
                       offset += d;
                     }
                   });
}

template <typename T>
VarT<T> mse_loss(VarT<T> pred, TensorT<T> target) {
  TapeT<T>& tape = *pred.tape;
  TensorT<T> loss = TensorT<T>::scalar(static_cast<T>(mse_value(pred.value(), target)));
  return tape.emit(std::move(loss), tape.needs_grad(pred.id),
                   [pid = pred.id, tgt = std::move(target)](TapeT<T>& t, const TensorT<T>& g) {
                     if (t.needs_grad(pid)) {
                       mse_backward(t.value(pid), tgt, g[0], t.grad_buffer(pid));
                     }
                   });
}

template <typename T>
VarT<T> reshape(VarT<T> x, Shape shape) {
  TapeT<T>& tape = *x.tape;
  TensorT<T> y = x.value().reshaped(std::move(shape));
  return tape.emit(std::move(y), tape.needs_grad(x.id),
                   [xid = x.id](TapeT<T>& t, const TensorT<T>& g) {
                     if (t.needs_grad(xid)) t.grad_buffer(xid).array() += g.array();
                   });
}

// [B, ...] -> [B, product of the rest]
template <typename T>
VarT<T> flatten_batch(VarT<T> x) {
  const Shape& s = x.shape();
  if (s.size() < 1) throw ShapeError("flatten requires rank >= 1");
  return reshape(x, Shape{s[0], shape_size(s) / s[0]});
}

template <typename T>
VarT<T> permute(VarT<T> x, std::vector<int> perm) {
  TapeT<T>& tape = *x.tape;
  TensorT<T> y = permute_forward(x.value(), perm);
  return tape.emit(std::move(y), tape.needs_grad(x.id),
                   [xid = x.id, inv = inverse_permutation(perm)](TapeT<T>& t, const TensorT<T>& g) {
                     if (t.needs_grad(xid)) {
                       t.grad_buffer(xid).array() += permute_forward(g, inv).array();
                     }
                   });
}

// --- optimizer -----------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected ADAM. Frozen parameters are left untouched.
template <typename T>
void adam_step(std::span<ParameterT<T>* const> params, const AdamConfig& cfg = {}) {
  for (ParameterT<T>* p : params) {
    if (!p->trainable) continue;
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in adam_step");
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    auto m = p->adam_m.array();
    auto v = p->adam_v.array();
    auto g = p->grad.array();
    m = static_cast<T>(cfg.beta1) * m + static_cast<T>(1.0 - cfg.beta1) * g;
    v = static_cast<T>(cfg.beta2) * v + static_cast<T>(1.0 - cfg.beta2) * g * g;
    p->value.array() -=
        static_cast<T>(cfg.lr) * (m / c1) / ((v / c2).sqrt() + static_cast<T>(cfg.eps));
  }
}

}  // namespace unmix
