#pragma once

// Reverse-mode differentiation on an explicit tape.
//
// A Tape owns every value produced during one forward pass. Var is a cheap
// handle (tape pointer + node index). Nodes are appended in execution order,
// so the tape is topologically sorted by construction. Backward may run once
// per tape; call reset() or clear_gradients() before running it again.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "delnet/kernels.hpp"
#include "delnet/tensor.hpp"

namespace delnet {

class TapeError : public std::logic_error {
 public:
  explicit TapeError(const std::string& what) : std::logic_error("tape error: " + what) {}
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return checked().value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  bool requires_grad() const { return checked().requires_grad(id_); }

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>& checked() const {
    if (!tape_) throw TapeError("use of an unbound Var");
    return *tape_;
  }

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  /// Accumulates into the gradient slots of the node's inputs. A slot is null
  /// when that input does not require a gradient.
  using BackwardFn = std::function<void(const Tape&, const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Learnable leaf.
  Var<T> variable(Tensor<T> value) { return push(std::move(value), {}, true, nullptr); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), {}, false, nullptr); }

  /// Records an op result. The backward rule is kept only when some input
  /// requires a gradient.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto id : inputs) needs = needs || nodes_.at(id).requires_grad;
    if (!needs) return push(std::move(value), {}, false, nullptr);
    return push(std::move(value), std::move(inputs), true, std::move(backward));
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(const Var<T>& root) {
    if (root.tape() != this) throw TapeError("backward root was not produced on this tape");
    if (root.id() >= nodes_.size()) throw TapeError("backward root is out of range");
    if (value(root.id()).numel() != 1) {
      throw TapeError("backward root must be a scalar, got shape " + to_string(value(root.id()).shape()));
    }
    if (backward_done_) throw TapeError("backward already ran on this tape; call clear_gradients() or reset() first");
    backward_done_ = true;

    grads_.assign(nodes_.size(), std::nullopt);
    grads_[root.id()] = Tensor<T>::full(value(root.id()).shape(), T{1});
    std::vector<Tensor<T>*> slots;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads_[i] || !node.backward) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t in = node.inputs[k];
        if (!nodes_[in].requires_grad) continue;
        if (!grads_[in]) grads_[in] = Tensor<T>::zeros(nodes_[in].value.shape());
        slots[k] = &*grads_[in];
      }
      node.backward(*this, *grads_[i], slots);
    }
  }

  /// Gradient of the last backward root with respect to `v`; zeros when `v`
  /// is unreachable from the root.
  Tensor<T> grad(const Var<T>& v) const {
    if (v.tape() != this) throw TapeError("grad() of a Var from another tape");
    if (!backward_done_) throw TapeError("grad() before backward()");
    if (v.id() < grads_.size() && grads_[v.id()]) return *grads_[v.id()];
    return Tensor<T>::zeros(value(v.id()).shape());
  }

  void clear_gradients() {
    grads_.clear();
    backward_done_ = false;
  }

  void reset() {
    nodes_.clear();
    clear_gradients();
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, std::vector<std::size_t> inputs, bool requires_grad, BackwardFn backward) {
    if (backward_done_) throw TapeError("cannot record after backward(); reset the tape");
    nodes_.push_back(Node{std::move(value), std::move(inputs), requires_grad, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable addresses: Var::value() hands out references
  std::vector<std::optional<Tensor<T>>> grads_;
  bool backward_done_ = false;
};

namespace detail {
template <typename T>
Tape<T>& same_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const auto* v : vars) {
    if (!v->valid()) throw TapeError("use of an unbound Var");
    if (tape && v->tape() != tape) throw TapeError("operands live on different tapes");
    tape = v->tape();
  }
  return *tape;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dSpec spec = {}) {
  auto& tape = detail::same_tape<T>({&x, &weight, &bias});
  auto out = kernels::conv2d(x.value(), weight.value(), bias.value(), spec);
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, iw, ib}, [ix, iw, ib, spec](const Tape<T>& t, const Tensor<T>& g, auto slots) {
    kernels::conv2d_backward(t.value(ix), t.value(iw), t.value(ib), spec, g, slots[0], slots[1], slots[2]);
  });
}

/// Zero-padded "same" convolution for odd square kernels at stride 1.
template <typename T>
Var<T> conv2d_same(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t dilation = 1) {
  const std::size_t k = weight.dim(2);
  if (k % 2 == 0) throw ShapeError("conv2d_same: kernel extent must be odd, got " + std::to_string(k));
  return conv2d(x, weight, bias, Conv2dSpec{1, dilation * (k - 1) / 2, dilation});
}

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  auto& tape = detail::same_tape<T>({&x, &slope});
  const std::size_t ix = x.id(), is = slope.id();
  return tape.record(kernels::prelu(x.value(), slope.value()), {ix, is},
                     [ix, is](const Tape<T>& t, const Tensor<T>& g, auto slots) {
                       kernels::prelu_backward(t.value(ix), t.value(is), g, slots[0], slots[1]);
                     });
}

namespace detail {
// Unary op whose derivative is expressed through the input x and output y.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const Var<T>& x, Fwd&& fwd, Deriv deriv) {
  auto& tape = same_tape<T>({&x});
  auto y = kernels::map(x.value(), fwd);
  const std::size_t ix = x.id();
  const std::size_t iy = tape.size();
  return tape.record(std::move(y), {ix}, [ix, iy, deriv](const Tape<T>& t, const Tensor<T>& g, auto slots) {
    const auto& xv = t.value(ix);
    const auto& yv = t.value(iy);
    auto& gx = *slots[0];
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += deriv(xv[i], yv[i]) * g[i];
  });
}
}  // namespace detail

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary(x, [](T v) { return kernels::sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

/// Natural log; the input must be strictly positive.
template <typename T>
Var<T> log(const Var<T>& x) {
  for (T v : x.value().values()) {
    if (!(v > T{0})) throw RangeError("log of non-positive value");
  }
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  return detail::unary(x, [](T v) { return std::abs(v); },
                       [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

/// Clamp to [lo, hi]; the gradient is zero outside the open interval.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v, T) { return v > lo && v < hi ? T{1} : T{0}; });
}

/// max(x, floor); the gradient passes where x > floor.
template <typename T>
Var<T> clamp_min(const Var<T>& x, T floor) {
  return detail::unary(x, [floor](T v) { return v > floor ? v : floor; },
                       [floor](T v, T) { return v > floor ? T{1} : T{0}; });
}

/// x^p for x > 0, and 0 for x <= 0 (with zero gradient there).
template <typename T>
Var<T> pow_pos(const Var<T>& x, T p) {
  return detail::unary(x, [p](T v) { return v > T{0} ? std::pow(v, p) : T{0}; },
                       [p](T v, T y) { return v > T{0} ? p * y / v : T{0}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

namespace detail {
template <typename T, typename Fwd, typename Da, typename Db>
Var<T> binary(const char* name, const Var<T>& a, const Var<T>& b, Fwd&& fwd, Da da, Db db) {
  auto& tape = same_tape<T>({&a, &b});
  auto out = kernels::binary(name, a.value(), b.value(), fwd);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, da, db](const Tape<T>& t, const Tensor<T>& g, auto slots) {
    kernels::binary_backward(t.value(ia), t.value(ib), g, slots[0], slots[1], da, db);
  });
}
}  // namespace detail

/// Elementwise ops broadcast equal-rank operands whose extents match or are 1,
/// e.g. [N,C,1,1] or [N,1,H,W] against [N,C,H,W].
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{1}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                        [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary("div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
                        [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  auto& tape = detail::same_tape<T>({&x});
  const std::size_t ix = x.id();
  return tape.record(kernels::global_avg_pool(x.value()), {ix}, [ix](const Tape<T>& t, const Tensor<T>& g, auto slots) {
    const auto& xv = t.value(ix);
    const std::size_t plane = xv.dim(2) * xv.dim(3);
    auto& gx = *slots[0];
    for (std::size_t p = 0; p < g.numel(); ++p) {
      const T v = g[p] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += v;
    }
  });
}

using kernels::ChannelPoolMode;

template <typename T>
Var<T> channel_pool(const Var<T>& x, ChannelPoolMode mode) {
  auto& tape = detail::same_tape<T>({&x});
  const std::size_t ix = x.id();
  return tape.record(kernels::channel_pool(x.value(), mode), {ix},
                     [ix, mode](const Tape<T>& t, const Tensor<T>& g, auto slots) {
                       kernels::channel_pool_backward(t.value(ix), mode, g, *slots[0]);
                     });
}

/// Stacks channels in argument order.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  std::vector<const Tensor<T>*> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    detail::same_tape<T>({&parts.front(), &p});
    values.push_back(&p.value());
    ids.push_back(p.id());
  }
  std::vector<std::size_t> widths;
  for (const auto* v : values) widths.push_back(v->dim(1));
  auto& tape = *parts.front().tape();
  return tape.record(kernels::concat_channels(values), ids,
                     [widths](const Tape<T>&, const Tensor<T>& g, auto slots) {
                       const std::size_t n = g.dim(0), plane = g.dim(2) * g.dim(3), channels = g.dim(1);
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < slots.size(); ++k) {
                         const std::size_t c = widths[k];
                         if (Tensor<T>* slot = slots[k]) {
                           for (std::size_t b = 0; b < n; ++b) {
                             const T* src = g.data() + (b * channels + offset) * plane;
                             T* dst = slot->data() + b * c * plane;
                             for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                           }
                         }
                         offset += c;
                       }
                     });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  auto& tape = detail::same_tape<T>({&x});
  return tape.record(kernels::upsample_nearest2x(x.value()), {x.id()},
                     [](const Tape<T>&, const Tensor<T>& g, auto slots) {
                       kernels::upsample_nearest2x_backward(g, *slots[0]);
                     });
}

template <typename T>
Var<T> avg_pool2x2(const Var<T>& x) {
  auto& tape = detail::same_tape<T>({&x});
  return tape.record(kernels::avg_pool2x2(x.value()), {x.id()}, [](const Tape<T>&, const Tensor<T>& g, auto slots) {
    kernels::avg_pool2x2_backward(g, *slots[0]);
  });
}

/// Stride-2 3x3 conv halving both extents; odd extents are rejected.
template <typename T>
Var<T> downsample(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank4(x.value(), "downsample");
  if (x.dim(2) % 2 || x.dim(3) % 2) throw ShapeError("downsample: odd extent in " + to_string(x.shape()));
  if (weight.dim(2) != 3 || weight.dim(3) != 3) throw ShapeError("downsample: expected a 3x3 kernel, got " + to_string(weight.shape()));
  return conv2d(x, weight, bias, Conv2dSpec{2, 1, 1});
}

/// Nearest-neighbour x2 followed by a same-padded conv.
template <typename T>
Var<T> upsample(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return conv2d_same(upsample_nearest2x(x), weight, bias);
}

/// Sum of all elements as a rank-0 tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  auto& tape = detail::same_tape<T>({&x});
  return tape.record(Tensor<T>::scalar(kernels::sum(x.value())), {x.id()},
                     [](const Tape<T>&, const Tensor<T>& g, auto slots) {
                       auto& gx = *slots[0];
                       for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
                     });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return mul_scalar(sum(x), T{1} / static_cast<T>(x.value().numel()));
}

}  // namespace delnet
