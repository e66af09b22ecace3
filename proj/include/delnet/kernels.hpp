#pragma once

// Forward and backward numeric kernels over plain tensors. Every forward
// kernel reports its multiply-accumulate count to the active MacCountScope,
// using the same convention as the analytic complexity counter:
//   conv       Ho*Wo*Cout*Cin*k*k per image (bias not counted)
//   pointwise  one per output element (activations, pools, add/mul, clamp)
//   movement   zero (concat, nearest upsample)
// Backward kernels are not counted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "delnet/tensor.hpp"

namespace delnet {

namespace detail {
inline thread_local std::uint64_t* mac_sink = nullptr;

inline void count_macs(std::uint64_t n) {
  if (mac_sink) *mac_sink += n;
}

/// Runs fn(i) for i in [0, n). Each index writes disjoint output, so results
/// do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) fn(static_cast<std::size_t>(i));
#else
  for (std::size_t i = 0; i < n; ++i) fn(i);
#endif
}
}  // namespace detail

/// Collects the MAC count of every forward kernel run on this thread while
/// the scope is alive. Scopes nest; the innermost one receives the counts.
class MacCountScope {
 public:
  MacCountScope() : previous_(detail::mac_sink) { detail::mac_sink = &count_; }
  // Counts also flow to the enclosing scope, if any.
  ~MacCountScope() {
    detail::mac_sink = previous_;
    if (previous_) *previous_ += count_;
  }
  MacCountScope(const MacCountScope&) = delete;
  MacCountScope& operator=(const MacCountScope&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

/// Caps kernel parallelism; n <= 0 restores one thread per core.
inline void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// Output extent of a convolution along one axis; throws when the dilated
/// kernel does not fit the padded input.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const Conv2dSpec& s) {
  if (s.stride == 0 || s.dilation == 0) throw ShapeError("conv2d: stride and dilation must be >= 1");
  const std::size_t span = s.dilation * (k - 1) + 1;
  if (in + 2 * s.padding < span) {
    throw ShapeError("conv2d: kernel span " + std::to_string(span) + " exceeds padded extent " +
                     std::to_string(in + 2 * s.padding));
  }
  return (in + 2 * s.padding - span) / s.stride + 1;
}

namespace kernels {

namespace detail {

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  std::ptrdiff_t stride, pad, dil;

  // Valid output-column range [lo, hi) for kernel column kx.
  std::pair<std::ptrdiff_t, std::ptrdiff_t> ox_range(std::size_t kx) const {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) * dil - pad;
    std::ptrdiff_t lo = 0;
    if (off < 0) lo = (-off + stride - 1) / stride;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(w) - 1 - off;
    std::ptrdiff_t hi = last < 0 ? 0 : last / stride + 1;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(wo));
    return {lo, std::max(lo, hi)};
  }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dSpec& s) {
  require_rank4(x, "conv2d input");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + to_string(weight.shape()));
  if (weight.dim(1) != x.dim(1)) throw ShapeError("conv2d: input channels", x.shape(), weight.shape());
  if (bias.shape() != Shape{weight.dim(0)}) throw ShapeError("conv2d: bias", weight.shape(), bias.shape());
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.ho = conv_out_extent(g.h, g.kh, s);
  g.wo = conv_out_extent(g.w, g.kw, s);
  g.stride = static_cast<std::ptrdiff_t>(s.stride);
  g.pad = static_cast<std::ptrdiff_t>(s.padding);
  g.dil = static_cast<std::ptrdiff_t>(s.dilation);
  return g;
}

}  // namespace detail

/// Cross-correlation (no kernel flip) with zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dSpec& s) {
  const auto g = detail::conv_geometry(x, weight, bias, s);
  Tensor<T> out({g.n, g.cout, g.ho, g.wo});
  const T* xp = x.data();
  const T* wp = weight.data();
  T* op = out.data();
  const std::size_t plane_in = g.h * g.w;
  const std::size_t plane_out = g.ho * g.wo;

  delnet::detail::parallel_for(g.n * g.cout, [&](std::size_t job) {
    const std::size_t n = job / g.cout;
    const std::size_t co = job % g.cout;
    T* o = op + job * plane_out;
    std::fill(o, o + plane_out, bias[co]);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* in = xp + (n * g.cin + ci) * plane_in;
      const T* wk = wp + (co * g.cin + ci) * g.kh * g.kw;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const T wv = wk[ky * g.kw + kx];
          const auto [lo, hi] = g.ox_range(kx);
          if (lo >= hi) continue;
          const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dil - g.pad;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride + static_cast<std::ptrdiff_t>(ky) * g.dil - g.pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* row = in + iy * static_cast<std::ptrdiff_t>(g.w);
            T* orow = o + oy * g.wo;
            if (g.stride == 1) {
              const T* src = row + xoff;
              for (std::ptrdiff_t ox = lo; ox < hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (std::ptrdiff_t ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox * g.stride + xoff];
            }
          }
        }
      }
    }
  });
  delnet::detail::count_macs(static_cast<std::uint64_t>(g.n) * g.cout * plane_out * g.cin * g.kh * g.kw);
  return out;
}

/// Accumulates input, weight and bias gradients of conv2d. Null targets are skipped.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dSpec& s,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const auto g = detail::conv_geometry(x, weight, bias, s);
  const std::size_t plane_in = g.h * g.w;
  const std::size_t plane_out = g.ho * g.wo;
  const T* xp = x.data();
  const T* wp = weight.data();
  const T* gp = gout.data();

  if (gx) {
    T* gxp = gx->data();
    delnet::detail::parallel_for(g.n * g.cin, [&](std::size_t job) {
      const std::size_t n = job / g.cin;
      const std::size_t ci = job % g.cin;
      T* gin = gxp + job * plane_in;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T* go = gp + (n * g.cout + co) * plane_out;
        const T* wk = wp + (co * g.cin + ci) * g.kh * g.kw;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const T wv = wk[ky * g.kw + kx];
            const auto [lo, hi] = g.ox_range(kx);
            if (lo >= hi) continue;
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dil - g.pad;
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride + static_cast<std::ptrdiff_t>(ky) * g.dil - g.pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              T* row = gin + iy * static_cast<std::ptrdiff_t>(g.w);
              const T* grow = go + oy * g.wo;
              if (g.stride == 1) {
                T* dst = row + xoff;
                for (std::ptrdiff_t ox = lo; ox < hi; ++ox) dst[ox] += wv * grow[ox];
              } else {
                for (std::ptrdiff_t ox = lo; ox < hi; ++ox) row[ox * g.stride + xoff] += wv * grow[ox];
              }
            }
          }
        }
      }
    });
  }

  if (gw) {
    T* gwp = gw->data();
    delnet::detail::parallel_for(g.cout, [&](std::size_t co) {
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto [lo, hi] = g.ox_range(kx);
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dil - g.pad;
            T acc{0};
            for (std::size_t n = 0; n < g.n && lo < hi; ++n) {
              const T* in = xp + (n * g.cin + ci) * plane_in;
              const T* go = gp + (n * g.cout + co) * plane_out;
              for (std::size_t oy = 0; oy < g.ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * g.stride + static_cast<std::ptrdiff_t>(ky) * g.dil - g.pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                const T* row = in + iy * static_cast<std::ptrdiff_t>(g.w);
                const T* grow = go + oy * g.wo;
                if (g.stride == 1) {
                  const T* src = row + xoff;
                  for (std::ptrdiff_t ox = lo; ox < hi; ++ox) acc += grow[ox] * src[ox];
                } else {
                  for (std::ptrdiff_t ox = lo; ox < hi; ++ox) acc += grow[ox] * row[ox * g.stride + xoff];
                }
              }
            }
            gwp[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] += acc;
          }
        }
      }
    });
  }

  if (gb) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      T acc{0};
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* go = gp + (n * g.cout + co) * plane_out;
        for (std::size_t i = 0; i < plane_out; ++i) acc += go[i];
      }
      (*gb)[co] += acc;
    }
  }
}

/// Per-channel (slope shape [C]) or shared (slope shape [1] or rank 0) PReLU.
template <typename T>
std::size_t prelu_channels(const Tensor<T>& x, const Tensor<T>& slope) {
  if (slope.numel() == 1) return 1;
  require_rank4(x, "prelu");
  if (slope.shape() != Shape{x.dim(1)}) throw ShapeError("prelu: slope", x.shape(), slope.shape());
  return x.dim(1);
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  const std::size_t c = prelu_channels(x, slope);
  Tensor<T> out(x.shape());
  const std::size_t plane = c == 1 ? x.numel() : x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T a = slope[c == 1 ? 0 : (i / plane) % c];
    out[i] = x[i] >= T{0} ? x[i] : a * x[i];
  }
  delnet::detail::count_macs(x.numel());
  return out;
}

template <typename T>
void prelu_backward(const Tensor<T>& x, const Tensor<T>& slope, const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gs) {
  const std::size_t c = prelu_channels(x, slope);
  const std::size_t plane = c == 1 ? x.numel() : x.dim(2) * x.dim(3);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const std::size_t ch = c == 1 ? 0 : (i / plane) % c;
    if (x[i] >= T{0}) {
      if (gx) (*gx)[i] += gout[i];
    } else {
      if (gx) (*gx)[i] += slope[ch] * gout[i];
      if (gs) (*gs)[ch] += x[i] * gout[i];
    }
  }
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <typename T, typename Fn>
Tensor<T> map(const Tensor<T>& x, Fn&& fn) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fn(x[i]);
  delnet::detail::count_macs(x.numel());
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank4(x, "global_avg_pool");
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 1, 1});
  for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
    T acc{0};
    for (std::size_t i = 0; i < plane; ++i) acc += x[p * plane + i];
    out[p] = acc / static_cast<T>(plane);
  }
  delnet::detail::count_macs(out.numel());
  return out;
}

enum class ChannelPoolMode { kMean, kMax };

template <typename T>
Tensor<T> channel_pool(const Tensor<T>& x, ChannelPoolMode mode) {
  require_rank4(x, "channel_pool");
  const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), 1, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* base = x.data() + n * c * plane;
    T* o = out.data() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      T acc = base[i];
      for (std::size_t ch = 1; ch < c; ++ch) {
        const T v = base[ch * plane + i];
        acc = mode == ChannelPoolMode::kMean ? acc + v : (v > acc ? v : acc);
      }
      o[i] = mode == ChannelPoolMode::kMean ? acc / static_cast<T>(c) : acc;
    }
  }
  delnet::detail::count_macs(out.numel());
  return out;
}

/// Max-mode ties route to the lowest channel index.
template <typename T>
void channel_pool_backward(const Tensor<T>& x, ChannelPoolMode mode, const Tensor<T>& gout, Tensor<T>& gx) {
  const std::size_t c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* base = x.data() + n * c * plane;
    T* g = gx.data() + n * c * plane;
    const T* go = gout.data() + n * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (mode == ChannelPoolMode::kMean) {
        for (std::size_t ch = 0; ch < c; ++ch) g[ch * plane + i] += go[i] / static_cast<T>(c);
      } else {
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch) {
          if (base[ch * plane + i] > base[best * plane + i]) best = ch;
        }
        g[best * plane + i] += go[i];
      }
    }
  }
}

/// Equal-rank broadcasting: every extent pair must match or one side must be 1.
/// Returns the output shape.
inline Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (a.size() != b.size()) throw ShapeError(op, a, b);
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw ShapeError(op, a, b);
    }
  }
  return out;
}

namespace detail {
// Element strides of `s` viewed with the (equal-rank) output shape; broadcast dims get 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = out.size(); i-- > 0;) {
    st[i] = s[i] == 1 && out[i] != 1 ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

// Calls fn(out_index, a_index, b_index) in row-major output order.
template <typename Fn>
void for_each_broadcast(const Shape& a, const Shape& b, const Shape& out, Fn&& fn) {
  const std::size_t total = delnet::numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}
}  // namespace detail

template <typename T, typename Fn>
Tensor<T> binary(const std::string& op, const Tensor<T>& a, const Tensor<T>& b, Fn&& fn) {
  Tensor<T> out(broadcast_shape(op, a.shape(), b.shape()));
  detail::for_each_broadcast(a.shape(), b.shape(), out.shape(),
                             [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fn(a[ia], b[ib]); });
  delnet::detail::count_macs(out.numel());
  return out;
}

/// Accumulates d(out)/d(a) * gout into ga and d(out)/d(b) * gout into gb,
/// summing over broadcast dimensions. `da(a, b)` and `db(a, b)` are the
/// elementwise partials.
template <typename T, typename Da, typename Db>
void binary_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& gout, Tensor<T>* ga, Tensor<T>* gb,
                     Da&& da, Db&& db) {
  detail::for_each_broadcast(a.shape(), b.shape(), gout.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
    if (ga) (*ga)[ia] += da(a[ia], b[ib]) * gout[i];
    if (gb) (*gb)[ib] += db(a[ia], b[ib]) * gout[i];
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts.front()->shape();
  require_rank4(*parts.front(), "concat_channels");
  std::size_t channels = 0;
  for (const auto* p : parts) {
    require_rank4(*p, "concat_channels");
    const Shape& s = p->shape();
    if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) throw ShapeError("concat_channels", first, s);
    channels += s[1];
  }
  Tensor<T> out({first[0], channels, first[2], first[3]});
  const std::size_t plane = first[2] * first[3];
  for (std::size_t n = 0; n < first[0]; ++n) {
    T* dst = out.data() + n * channels * plane;
    for (const auto* p : parts) {
      const std::size_t count = p->dim(1) * plane;
      std::copy_n(p->data() + n * count, count, dst);
      dst += count;
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require_rank4(x, "upsample");
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
  }
  return out;
}

template <typename T>
void upsample_nearest2x_backward(const Tensor<T>& gout, Tensor<T>& gx) {
  const std::size_t h = gx.dim(2), w = gx.dim(3);
  for (std::size_t p = 0; p < gx.dim(0) * gx.dim(1); ++p) {
    const T* src = gout.data() + p * 4 * h * w;
    T* dst = gx.data() + p * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
    }
  }
}

/// 2x2 mean pooling; a trailing odd row/column is dropped.
template <typename T>
Tensor<T> avg_pool2x2(const Tensor<T>& x) {
  require_rank4(x, "avg_pool2x2");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("avg_pool2x2: extent below 2 in " + to_string(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out({x.dim(0), x.dim(1), ho, wo});
  for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const T* s0 = src + 2 * y * w + 2 * xx;
        dst[y * wo + xx] = (s0[0] + s0[1] + s0[w] + s0[w + 1]) * T(0.25);
      }
    }
  }
  delnet::detail::count_macs(out.numel());
  return out;
}

template <typename T>
void avg_pool2x2_backward(const Tensor<T>& gout, Tensor<T>& gx) {
  const std::size_t h = gx.dim(2), w = gx.dim(3), ho = h / 2, wo = w / 2;
  for (std::size_t p = 0; p < gx.dim(0) * gx.dim(1); ++p) {
    const T* src = gout.data() + p * ho * wo;
    T* dst = gx.data() + p * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t xx = 0; xx < wo; ++xx) {
        const T g = src[y * wo + xx] * T(0.25);
        T* d0 = dst + 2 * y * w + 2 * xx;
        d0[0] += g;
        d0[1] += g;
        d0[w] += g;
        d0[w + 1] += g;
      }
    }
  }
}

template <typename T>
T sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.values()) acc += v;
  return acc;
}

}  // namespace kernels
}  // namespace delnet
