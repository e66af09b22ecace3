#pragma once

// Central finite-difference checks of tape gradients, in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "delnet/autograd.hpp"

namespace delnet {

/// Builds a scalar from input Vars on the given tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checks = 0;
  std::size_t skipped = 0;  // points redrawn because the step crossed a kink
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Magnitudes below this are treated as equal when forming relative errors.
  double floor = 1e-8;
  // A point counts as straddling a kink when the h and h/2 central
  // differences disagree by more than this fraction of `tolerance`.
  double kink_fraction = 0.1;
  // At most trials * factor points may be redrawn before the check fails.
  std::size_t max_redraw_factor = 2;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {
inline double eval_scalar(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

inline bool straddles_kink(double central_h, double central_half, const GradCheckOptions& opt) {
  const double scale = std::max({std::abs(central_h), std::abs(central_half), opt.floor});
  return std::abs(central_h - central_half) > opt.kink_fraction * opt.tolerance * scale;
}

inline std::vector<Tensor<double>> analytic_grads(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  auto root = fn(tape, vars);
  tape.backward(root);
  std::vector<Tensor<double>> grads;
  for (const auto& v : vars) grads.push_back(tape.grad(v));
  return grads;
}
}  // namespace detail

/// Compares the analytic directional derivative <grad f(x), v> with
/// (f(x + h v) - f(x - h v)) / 2h. `sample` draws a fresh input point per
/// trial; directions are standard normal. A point where the step straddles a
/// kink (relu corner, |.| at zero, max tie) badly enough to move the estimate
/// is redrawn: there the central differences at h and h/2 disagree, while on
/// smooth points they agree to O(h^2).
inline GradCheckResult check_directional(
    const std::string& name, const std::function<std::vector<Tensor<double>>(std::mt19937_64&)>& sample,
    const ScalarFn& fn, std::size_t trials, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  GradCheckResult result{name, 0.0, opt.tolerance, 0};
  std::mt19937_64 rng(seed);
  const std::size_t max_draws = trials * (1 + opt.max_redraw_factor);
  for (std::size_t draw = 0; result.checks < trials; ++draw) {
    if (draw == max_draws) {
      result.max_rel_error = std::numeric_limits<double>::infinity();
      break;
    }
    const auto x = sample(rng);
    const auto grads = detail::analytic_grads(fn, x);
    std::vector<Tensor<double>> dir;
    double analytic = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      dir.push_back(Tensor<double>::normal(x[i].shape(), rng));
      for (std::size_t k = 0; k < x[i].numel(); ++k) analytic += grads[i][k] * dir[i][k];
    }
    auto central = [&](double h) {
      auto shifted = [&](double delta) {
        auto xs = x;
        for (std::size_t i = 0; i < xs.size(); ++i) {
          for (std::size_t k = 0; k < xs[i].numel(); ++k) xs[i][k] += delta * dir[i][k];
        }
        return detail::eval_scalar(fn, xs);
      };
      return (shifted(h) - shifted(-h)) / (2.0 * h);
    };
    const double numeric = central(opt.step);
    if (detail::straddles_kink(numeric, central(opt.step / 2), opt)) {
      ++result.skipped;
      continue;
    }
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric, opt.floor));
    ++result.checks;
  }
  return result;
}

struct Coordinate {
  std::size_t input;
  std::size_t index;
};

/// Per-scalar central differences at fixed coordinates of a fixed point.
/// Coordinates whose step straddles a kink are skipped; checking stops once
/// `wanted` coordinates have been compared.
inline GradCheckResult check_coordinates(const std::string& name, const std::vector<Tensor<double>>& x,
                                         const ScalarFn& fn, std::span<const Coordinate> coords,
                                         const GradCheckOptions& opt = {},
                                         std::size_t wanted = std::numeric_limits<std::size_t>::max()) {
  GradCheckResult result{name, 0.0, opt.tolerance, 0};
  const auto grads = detail::analytic_grads(fn, x);
  for (const auto& c : coords) {
    if (result.checks == wanted) break;
    auto central = [&](double h) {
      auto plus = x;
      auto minus = x;
      plus[c.input][c.index] += h;
      minus[c.input][c.index] -= h;
      return (detail::eval_scalar(fn, plus) - detail::eval_scalar(fn, minus)) / (2.0 * h);
    };
    const double numeric = central(opt.step);
    if (detail::straddles_kink(numeric, central(opt.step / 2), opt)) {
      ++result.skipped;
      continue;
    }
    result.max_rel_error =
        std::max(result.max_rel_error, relative_error(grads[c.input][c.index], numeric, opt.floor));
    ++result.checks;
  }
  if (wanted != std::numeric_limits<std::size_t>::max() && result.checks < wanted) {
    result.max_rel_error = std::numeric_limits<double>::infinity();
  }
  return result;
}

}  // namespace delnet
