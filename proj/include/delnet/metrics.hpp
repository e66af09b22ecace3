#pragma once

// Image quality metrics: PSNR, SSIM, MS-SSIM and CIEDE2000.
//
// SSIM uses an 11x11 Gaussian window (sigma 1.5) applied without padding,
// K1 = 0.01, K2 = 0.03 and a dynamic range of 1. Three-channel inputs are
// reduced to luma (0.299, 0.587, 0.114) first. MS-SSIM multiplies the mean
// contrast-structure term of each finer scale with the full SSIM of the
// coarsest scale, raised to the standard five-scale weights; scales are
// separated by 2x2 mean pooling. The SSIM machinery is built from tape ops so
// the training loss can differentiate through it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "delnet/autograd.hpp"
#include "delnet/tensor.hpp"

namespace delnet {

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr double kPsnrCap = 100.0;

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Normalized [1,1,k,k] Gaussian kernel.
template <typename T>
Tensor<T> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[i];
  }
  Tensor<T> w({1, 1, size, size});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) w[y * size + x] = static_cast<T>(g[y] * g[x] / (total * total));
  }
  return w;
}

namespace detail {
template <typename T>
void check_image_pair(const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, op);
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
  if (a.dim(1) != 1 && a.dim(1) != 3) throw ShapeError(op + ": expected 1 or 3 channels, got " + to_string(a.shape()));
}
}  // namespace detail

/// [N,3,H,W] -> [N,1,H,W] luma; single-channel input passes through.
template <typename T>
Var<T> luma(const Var<T>& img) {
  require_rank4(img.value(), "luma");
  if (img.dim(1) == 1) return img;
  if (img.dim(1) != 3) throw ShapeError("luma: expected 1 or 3 channels, got " + to_string(img.shape()));
  auto& tape = *img.tape();
  auto w = tape.constant(Tensor<T>({1, 3, 1, 1}, std::vector<T>{T(0.299), T(0.587), T(0.114)}));
  auto b = tape.constant(Tensor<T>::zeros({1}));
  return conv2d(img, w, b);
}

/// Per-image mean SSIM and mean contrast-structure term, each [N,1,1,1].
template <typename T>
struct SsimTerms {
  Var<T> ssim;
  Var<T> cs;
};

/// Single-channel inputs; the window must fit inside the image.
template <typename T>
SsimTerms<T> ssim_terms(const Var<T>& x, const Var<T>& y, std::size_t window, const SsimOptions& opt) {
  auto& tape = *x.tape();
  auto g = tape.constant(gaussian_window<T>(window, opt.sigma));
  auto zero = tape.constant(Tensor<T>::zeros({1}));
  auto filt = [&](const Var<T>& v) { return conv2d(v, g, zero); };
  const T c1 = static_cast<T>(opt.k1 * opt.k1);
  const T c2 = static_cast<T>(opt.k2 * opt.k2);

  auto mu_x = filt(x);
  auto mu_y = filt(y);
  auto mu_xx = square(mu_x);
  auto mu_yy = square(mu_y);
  auto mu_xy = mul(mu_x, mu_y);
  auto var_x = sub(filt(square(x)), mu_xx);
  auto var_y = sub(filt(square(y)), mu_yy);
  auto cov = sub(filt(mul(x, y)), mu_xy);

  auto cs_map = div(add_scalar(mul_scalar(cov, T{2}), c2), add_scalar(add(var_x, var_y), c2));
  auto l_map = div(add_scalar(mul_scalar(mu_xy, T{2}), c1), add_scalar(add(mu_xx, mu_yy), c1));
  return {global_avg_pool(mul(l_map, cs_map)), global_avg_pool(cs_map)};
}

/// Window for a single-scale evaluation: the configured window, or the
/// largest odd size that fits when the image is smaller.
inline std::size_t fitted_window(std::size_t h, std::size_t w, const SsimOptions& opt) {
  const std::size_t m = std::min(h, w);
  if (m >= opt.window) return opt.window;
  return m % 2 ? m : m - 1;
}

/// Number of MS-SSIM scales used for an HxW image when `requested` is 0:
/// up to five, as many as keep the coarsest scale at least one window wide
/// (at least one).
inline std::size_t ms_ssim_scale_count(std::size_t h, std::size_t w, std::size_t requested = 0,
                                       const SsimOptions& opt = {}) {
  std::size_t feasible = 0;
  for (std::size_t s = 1; s <= kMsSsimWeights.size(); ++s) {
    const std::size_t f = std::size_t{1} << (s - 1);
    if (std::min(h / f, w / f) >= opt.window) feasible = s;
  }
  if (requested == 0) return std::max<std::size_t>(feasible, 1);
  if (requested > kMsSsimWeights.size() || requested > feasible) {
    throw ShapeError("ms_ssim: " + std::to_string(h) + "x" + std::to_string(w) + " image is too small for " +
                     std::to_string(requested) + " scales (at most " + std::to_string(feasible) + ")");
  }
  return requested;
}

/// Mean SSIM over the batch as a scalar.
template <typename T>
Var<T> ssim(const Var<T>& gt, const Var<T>& pred, const SsimOptions& opt = {}) {
  detail::check_image_pair("ssim", gt.value(), pred.value());
  const std::size_t win = fitted_window(gt.dim(2), gt.dim(3), opt);
  return mean(ssim_terms(luma(gt), luma(pred), win, opt).ssim);
}

/// Mean MS-SSIM over the batch as a scalar. Negative per-scale terms are
/// clamped to zero before exponentiation so the result stays in [0, 1].
/// With fewer than five scales the leading weights are renormalized to sum 1.
template <typename T>
Var<T> ms_ssim(const Var<T>& gt, const Var<T>& pred, std::size_t scales = 0, const SsimOptions& opt = {}) {
  detail::check_image_pair("ms_ssim", gt.value(), pred.value());
  const std::size_t m = ms_ssim_scale_count(gt.dim(2), gt.dim(3), scales, opt);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) weight_sum += kMsSsimWeights[i];

  auto x = luma(gt);
  auto y = luma(pred);
  Var<T> product;
  for (std::size_t s = 0; s < m; ++s) {
    if (s) {
      x = avg_pool2x2(x);
      y = avg_pool2x2(y);
    }
    const std::size_t win = fitted_window(x.dim(2), x.dim(3), opt);
    const auto terms = ssim_terms(x, y, win, opt);
    const T weight = static_cast<T>(kMsSsimWeights[s] / weight_sum);
    auto factor = pow_pos(s + 1 == m ? terms.ssim : terms.cs, weight);
    product = s ? mul(product, factor) : factor;
  }
  return mean(product);
}

// ---------------------------------------------------------------------------
// Plain-tensor metric entry points (evaluated in double precision)
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void check_unit_range(const std::string& op, const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!(v >= T{0} && v <= T{1})) throw RangeError(op + ": values must lie in [0, 1]");
  }
}

template <typename T, typename Fn>
double eval_on_tape(const Tensor<T>& gt, const Tensor<T>& pred, Fn&& fn) {
  Tape<double> tape;
  auto a = tape.constant(gt.template cast<double>());
  auto b = tape.constant(pred.template cast<double>());
  return fn(a, b).value().item();
}
}  // namespace detail

/// 10*log10(1/MSE) over all channels; identical images report kPsnrCap.
template <typename T>
double psnr(const Tensor<T>& gt, const Tensor<T>& pred) {
  if (gt.shape() != pred.shape()) throw ShapeError("psnr", gt.shape(), pred.shape());
  detail::check_unit_range("psnr", gt);
  detail::check_unit_range("psnr", pred);
  double se = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) {
    const double d = static_cast<double>(gt[i]) - static_cast<double>(pred[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(gt.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

template <typename T>
double ssim(const Tensor<T>& gt, const Tensor<T>& pred, const SsimOptions& opt = {}) {
  return detail::eval_on_tape(gt, pred, [&](const auto& a, const auto& b) { return ssim(a, b, opt); });
}

template <typename T>
double ms_ssim(const Tensor<T>& gt, const Tensor<T>& pred, std::size_t scales = 0, const SsimOptions& opt = {}) {
  return detail::eval_on_tape(gt, pred, [&](const auto& a, const auto& b) { return ms_ssim(a, b, scales, opt); });
}

// ---------------------------------------------------------------------------
// CIEDE2000
// ---------------------------------------------------------------------------

struct Lab {
  double l = 0, a = 0, b = 0;
};

/// sRGB component in [0,1] to linear light.
inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

/// sRGB (D65, 2 degree observer) to CIELAB.
inline Lab srgb_to_lab(double r, double g, double b) {
  const double rl = srgb_to_linear(r), gl = srgb_to_linear(g), bl = srgb_to_linear(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  constexpr double delta = 6.0 / 29.0;
  auto f = [](double t) {
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
  };
  const double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// CIEDE2000 colour difference with kL = kC = kH = 1.
inline double ciede2000(const Lab& p1, const Lab& p2) {
  constexpr double pi = std::numbers::pi;
  auto deg = [](double rad) { return rad * 180.0 / pi; };
  auto rad = [](double d) { return d * pi / 180.0; };
  constexpr double pow25_7 = 6103515625.0;  // 25^7

  const double c1 = std::hypot(p1.a, p1.b);
  const double c2 = std::hypot(p2.a, p2.b);
  const double c_bar = (c1 + c2) / 2.0;
  const double c_bar7 = std::pow(c_bar, 7.0);
  const double g = 0.5 * (1.0 - std::sqrt(c_bar7 / (c_bar7 + pow25_7)));
  const double a1p = (1.0 + g) * p1.a;
  const double a2p = (1.0 + g) * p2.a;
  const double c1p = std::hypot(a1p, p1.b);
  const double c2p = std::hypot(a2p, p2.b);

  auto hue = [&](double b, double ap) {
    if (b == 0.0 && ap == 0.0) return 0.0;
    double h = deg(std::atan2(b, ap));
    return h < 0.0 ? h + 360.0 : h;
  };
  const double h1p = hue(p1.b, a1p);
  const double h2p = hue(p2.b, a2p);

  const double dlp = p2.l - p1.l;
  const double dcp = c2p - c1p;
  double dhp = 0.0;
  if (c1p * c2p != 0.0) {
    dhp = h2p - h1p;
    if (dhp > 180.0) dhp -= 360.0;
    else if (dhp < -180.0) dhp += 360.0;
  }
  const double dHp = 2.0 * std::sqrt(c1p * c2p) * std::sin(rad(dhp / 2.0));

  const double l_bar = (p1.l + p2.l) / 2.0;
  const double cp_bar = (c1p + c2p) / 2.0;
  double hp_bar = h1p + h2p;
  if (c1p * c2p != 0.0) {
    if (std::abs(h1p - h2p) <= 180.0) hp_bar /= 2.0;
    else if (h1p + h2p < 360.0) hp_bar = (h1p + h2p + 360.0) / 2.0;
    else hp_bar = (h1p + h2p - 360.0) / 2.0;
  }

  const double t = 1.0 - 0.17 * std::cos(rad(hp_bar - 30.0)) + 0.24 * std::cos(rad(2.0 * hp_bar)) +
                   0.32 * std::cos(rad(3.0 * hp_bar + 6.0)) - 0.20 * std::cos(rad(4.0 * hp_bar - 63.0));
  const double d_theta = 30.0 * std::exp(-std::pow((hp_bar - 275.0) / 25.0, 2.0));
  const double cp_bar7 = std::pow(cp_bar, 7.0);
  const double rc = 2.0 * std::sqrt(cp_bar7 / (cp_bar7 + pow25_7));
  const double l50 = (l_bar - 50.0) * (l_bar - 50.0);
  const double sl = 1.0 + 0.015 * l50 / std::sqrt(20.0 + l50);
  const double sc = 1.0 + 0.045 * cp_bar;
  const double sh = 1.0 + 0.015 * cp_bar * t;
  const double rt = -std::sin(rad(2.0 * d_theta)) * rc;

  const double tl = dlp / sl, tc = dcp / sc, th = dHp / sh;
  return std::sqrt(tl * tl + tc * tc + th * th + rt * tc * th);
}

/// Mean CIEDE2000 between two sRGB images, [3,H,W] or [1,3,H,W], in [0,1].
template <typename T>
double ciede2000(const Tensor<T>& gt_rgb, const Tensor<T>& pred_rgb) {
  if (gt_rgb.shape() != pred_rgb.shape()) throw ShapeError("ciede2000", gt_rgb.shape(), pred_rgb.shape());
  const Shape& s = gt_rgb.shape();
  const bool ok = (s.size() == 3 && s[0] == 3) || (s.size() == 4 && s[0] == 1 && s[1] == 3);
  if (!ok) throw ShapeError("ciede2000: expected [3,H,W] or [1,3,H,W], got " + to_string(s));
  detail::check_unit_range("ciede2000", gt_rgb);
  detail::check_unit_range("ciede2000", pred_rgb);
  const std::size_t plane = s[s.size() - 1] * s[s.size() - 2];
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const Lab a = srgb_to_lab(gt_rgb[i], gt_rgb[plane + i], gt_rgb[2 * plane + i]);
    const Lab b = srgb_to_lab(pred_rgb[i], pred_rgb[plane + i], pred_rgb[2 * plane + i]);
    total += ciede2000(a, b);
  }
  return total / static_cast<double>(plane);
}

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double ms_ssim = 0.0;
  double delta_e00 = 0.0;
};

/// All metrics for one [1,3,H,W] image pair.
template <typename T>
MetricReport evaluate(const Tensor<T>& gt, const Tensor<T>& pred) {
  return {psnr(gt, pred), ssim(gt, pred), ms_ssim(gt, pred), ciede2000(gt, pred)};
}

}  // namespace delnet
