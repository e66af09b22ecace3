#pragma once

// The finite-difference gradient suite: every differentiable op, the SCA and
// EAM blocks, the loss terms, and the full model end to end. Ops reduce to a
// scalar through a fixed random projection sum(out * R).

#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "delnet/gradcheck.hpp"
#include "delnet/losses.hpp"
#include "delnet/model.hpp"
#include "delnet/params.hpp"

namespace delnet {

struct GradSuiteOptions {
  std::uint64_t seed = 7;
  std::size_t trials = 20;          // random points per op
  double op_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  std::size_t end_to_end_extent = 16;
  std::size_t end_to_end_coords = 10;
  bool include_end_to_end = true;
};

namespace detail {

using Sampler = std::function<std::vector<Tensor<double>>(std::mt19937_64&)>;
using Op = std::function<Var<double>(std::span<const Var<double>>)>;

inline Tensor<double> positive(Shape s, std::mt19937_64& rng, double lo = 0.2, double hi = 2.0) {
  return Tensor<double>::uniform(std::move(s), rng, lo, hi);
}

inline Tensor<double> gaussian(Shape s, std::mt19937_64& rng, double std_dev = 1.0) {
  return Tensor<double>::normal(std::move(s), rng, 0.0, std_dev);
}

// f(inputs) = sum(op(inputs) * R) with R fixed per output shape.
class Projected {
 public:
  explicit Projected(std::uint64_t seed) : seed_(seed) {}
  ScalarFn wrap(Op op) const {
    const auto seed = seed_;
    return [op, seed](Tape<double>& tape, std::span<const Var<double>> in) {
      auto out = op(in);
      std::mt19937_64 rng(seed);
      auto r = tape.constant(Tensor<double>::normal(out.shape(), rng));
      return sum(mul(out, r));
    };
  }

 private:
  std::uint64_t seed_;
};

inline std::vector<Tensor<double>> slot_tensors(const std::vector<ParamSlot>& slots, std::mt19937_64& rng,
                                                double std_dev) {
  std::vector<Tensor<double>> out;
  for (const auto& s : slots) {
    out.push_back(s.kind == ParamKind::kSlope ? Tensor<double>::uniform(s.shape, rng, 0.1, 0.4)
                                              : gaussian(s.shape, rng, std_dev));
  }
  return out;
}

inline BoundParams<double> bind_slots(const std::vector<ParamSlot>& slots, std::span<const Var<double>> vars) {
  BoundParams<double> p;
  for (std::size_t i = 0; i < slots.size(); ++i) p.bind(slots[i].name, vars[i]);
  return p;
}

}  // namespace detail

/// Runs every check; results carry their own tolerance.
inline std::vector<GradCheckResult> run_gradient_suite(const GradSuiteOptions& opt = {}, std::ostream* report = nullptr) {
  using detail::gaussian;
  using detail::positive;
  using V = Var<double>;
  using In = std::span<const V>;
  std::vector<GradCheckResult> results;
  const detail::Projected proj(opt.seed ^ 0x9E3779B97F4A7C15ull);
  GradCheckOptions gopt;
  gopt.tolerance = opt.op_tolerance;
  std::uint64_t salt = 0;

  auto record = [&](GradCheckResult r) {
    if (report) {
      *report << (r.passed() ? "ok   " : "FAIL ") << r.name << " max_rel_error=" << r.max_rel_error
           << " tol=" << r.tolerance << " checks=" << r.checks << " skipped=" << r.skipped << "\n";
    }
    results.push_back(std::move(r));
  };
  auto op = [&](const std::string& name, detail::Sampler sample, detail::Op f) {
    record(check_directional(name, sample, proj.wrap(std::move(f)), opt.trials, opt.seed + 1000 * ++salt, gopt));
  };

  // Convolutions over stride / padding / dilation variants.
  struct ConvCase {
    const char* name;
    std::size_t cin, cout, k, h, w;
    Conv2dSpec spec;
  };
  for (const ConvCase& c : {ConvCase{"conv2d 3x3 same", 2, 3, 3, 5, 6, {1, 1, 1}},
                            ConvCase{"conv2d 3x3 stride 2", 3, 2, 3, 6, 6, {2, 1, 1}},
                            ConvCase{"conv2d 3x3 dilation 2", 2, 2, 3, 7, 7, {1, 2, 2}},
                            ConvCase{"conv2d 1x1", 4, 3, 1, 3, 4, {1, 0, 1}},
                            ConvCase{"conv2d 5x5 valid", 1, 2, 5, 7, 6, {1, 0, 1}}}) {
    op(
        c.name,
        [c](std::mt19937_64& rng) {
          return std::vector{gaussian({2, c.cin, c.h, c.w}, rng), gaussian({c.cout, c.cin, c.k, c.k}, rng),
                             gaussian({c.cout}, rng)};
        },
        [c](In in) { return conv2d(in[0], in[1], in[2], c.spec); });
  }
  op(
      "prelu per-channel",
      [](std::mt19937_64& rng) { return std::vector{gaussian({2, 3, 4, 4}, rng), positive({3}, rng, 0.05, 0.5)}; },
      [](In in) { return prelu(in[0], in[1]); });
  op(
      "prelu shared",
      [](std::mt19937_64& rng) { return std::vector{gaussian({1, 3, 4, 4}, rng), positive({1}, rng, 0.05, 0.5)}; },
      [](In in) { return prelu(in[0], in[1]); });
  op("sigmoid", [](std::mt19937_64& rng) { return std::vector{gaussian({2, 2, 3, 3}, rng, 3.0)}; },
     [](In in) { return sigmoid(in[0]); });
  op("log", [](std::mt19937_64& rng) { return std::vector{positive({1, 2, 3, 3}, rng)}; },
     [](In in) { return delnet::log(in[0]); });
  op("abs", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 3}, rng)}; },
     [](In in) { return abs(in[0]); });
  op("clamp", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 4, 4}, rng)}; },
     [](In in) { return clamp(in[0], -0.5, 0.5); });
  op("clamp_min", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 4, 4}, rng)}; },
     [](In in) { return clamp_min(in[0], 0.1); });
  op("pow_pos", [](std::mt19937_64& rng) { return std::vector{positive({1, 1, 3, 3}, rng)}; },
     [](In in) { return pow_pos(in[0], 0.3); });
  op("square", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 3}, rng)}; },
     [](In in) { return square(in[0]); });
  op("add_scalar/mul_scalar", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 3}, rng)}; },
     [](In in) { return mul_scalar(add_scalar(in[0], 0.7), -1.3); });

  // Binary ops, including the attention broadcasts.
  const std::vector<std::pair<Shape, Shape>> pairs{
      {{2, 3, 4, 4}, {2, 3, 4, 4}}, {{2, 3, 4, 4}, {2, 3, 1, 1}}, {{2, 3, 4, 4}, {2, 1, 4, 4}}};
  for (const auto& [sa, sb] : pairs) {
    const std::string tag = " " + to_string(sa) + "x" + to_string(sb);
    auto sample = [sa = sa, sb = sb](std::mt19937_64& rng) { return std::vector{gaussian(sa, rng), gaussian(sb, rng)}; };
    op("add" + tag, sample, [](In in) { return add(in[0], in[1]); });
    op("sub" + tag, sample, [](In in) { return sub(in[0], in[1]); });
    op("mul" + tag, sample, [](In in) { return mul(in[0], in[1]); });
    op(
        "div" + tag,
        [sa = sa, sb = sb](std::mt19937_64& rng) { return std::vector{gaussian(sa, rng), positive(sb, rng, 0.5, 2.0)}; },
        [](In in) { return div(in[0], in[1]); });
  }

  op("global_avg_pool", [](std::mt19937_64& rng) { return std::vector{gaussian({2, 3, 4, 5}, rng)}; },
     [](In in) { return global_avg_pool(in[0]); });
  op("channel_pool mean", [](std::mt19937_64& rng) { return std::vector{gaussian({2, 4, 3, 3}, rng)}; },
     [](In in) { return channel_pool(in[0], ChannelPoolMode::kMean); });
  op("channel_pool max", [](std::mt19937_64& rng) { return std::vector{gaussian({2, 4, 3, 3}, rng)}; },
     [](In in) { return channel_pool(in[0], ChannelPoolMode::kMax); });
  op(
      "concat_channels",
      [](std::mt19937_64& rng) { return std::vector{gaussian({2, 2, 3, 3}, rng), gaussian({2, 3, 3, 3}, rng)}; },
      [](In in) { return concat_channels<double>({in[0], in[1]}); });
  op("upsample_nearest2x", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 2}, rng)}; },
     [](In in) { return upsample_nearest2x(in[0]); });
  op("avg_pool2x2", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 5, 4}, rng)}; },
     [](In in) { return avg_pool2x2(in[0]); });
  op(
      "downsample",
      [](std::mt19937_64& rng) {
        return std::vector{gaussian({1, 2, 6, 4}, rng), gaussian({3, 2, 3, 3}, rng), gaussian({3}, rng)};
      },
      [](In in) { return downsample(in[0], in[1], in[2]); });
  op(
      "upsample",
      [](std::mt19937_64& rng) {
        return std::vector{gaussian({1, 3, 2, 3}, rng), gaussian({2, 3, 3, 3}, rng), gaussian({2}, rng)};
      },
      [](In in) { return upsample(in[0], in[1], in[2]); });
  op("sum", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 3}, rng)}; },
     [](In in) { return sum(in[0]); });
  op("mean", [](std::mt19937_64& rng) { return std::vector{gaussian({1, 2, 3, 3}, rng)}; },
     [](In in) { return mean(in[0]); });

  // Blocks, differentiated with respect to the input and every parameter.
  {
    std::vector<ParamSlot> slots;
    detail::block_slots(slots, "sca", 4, true);
    op(
        "sca_block",
        [slots](std::mt19937_64& rng) {
          auto t = detail::slot_tensors(slots, rng, 0.3);
          t.insert(t.begin(), gaussian({2, 4, 6, 6}, rng));
          return t;
        },
        [slots](In in) { return blocks::sca_block(in[0], detail::bind_slots(slots, in.subspan(1)), "sca"); });
  }
  {
    const std::vector<std::size_t> dilations{1, 2};
    std::vector<ParamSlot> slots;
    detail::eam_slots(slots, "eam", 3, dilations);
    op(
        "eam_block",
        [slots](std::mt19937_64& rng) {
          auto t = detail::slot_tensors(slots, rng, 0.3);
          t.insert(t.begin(), gaussian({1, 3, 7, 7}, rng));
          return t;
        },
        [slots, dilations](In in) {
          return blocks::eam_block(in[0], detail::bind_slots(slots, in.subspan(1)), "eam", dilations);
        });
  }

  // Loss terms with respect to the prediction.
  auto image_pair = [](std::size_t h, std::size_t w) {
    return [h, w](std::mt19937_64& rng) {
      return std::vector{positive({1, 3, h, w}, rng, 0.05, 0.95), positive({1, 3, h, w}, rng, 0.05, 0.95)};
    };
  };
  auto scalar = [](detail::Op f) {
    return [f](Tape<double>&, std::span<const V> in) { return f(in); };
  };
  auto loss_check = [&](const std::string& name, detail::Sampler sample, detail::Op f, double tol) {
    GradCheckOptions o = gopt;
    o.tolerance = tol;
    record(check_directional(name, sample, scalar(std::move(f)), opt.trials, opt.seed + 1000 * ++salt, o));
  };
  loss_check("ssim", image_pair(12, 12), [](In in) { return ssim(in[0], in[1]); }, opt.op_tolerance);
  loss_check("ms_ssim (2 scales)", image_pair(24, 24), [](In in) { return ms_ssim(in[0], in[1]); }, opt.op_tolerance);
  loss_check("l1_modified", image_pair(4, 4), [](In in) { return l1_modified(in[0], in[1], 1e-3); }, opt.op_tolerance);
  const RandomConvExtractor<double> extractor(LossConfig{}.extractor_seed);
  loss_check("loss_perceptual", image_pair(8, 8), [&](In in) { return loss_perceptual(in[0], in[1], extractor); },
             opt.op_tolerance);
  loss_check("loss_total (8x8)", image_pair(8, 8),
             [&](In in) { return loss_total(in[0], in[1], LossConfig{}, extractor).total; }, opt.end_to_end_tolerance);

  if (opt.include_end_to_end) {
    // Loss w.r.t. randomly chosen scalars of a perturbed default model.
    const ArchConfig config;
    const std::size_t e = opt.end_to_end_extent;
    std::mt19937_64 rng(opt.seed);
    const auto layout = param_layout(config);
    auto params = init_params<double>(config, opt.seed);
    std::vector<Tensor<double>> x;
    for (const auto& [name, t] : params) {
      auto noisy = t;
      for (auto& v : noisy.values()) v += 0.05 * std::normal_distribution<double>(0.0, 1.0)(rng);
      x.push_back(std::move(noisy));
    }
    const auto raw = Tensor<double>::uniform({1, 1, e, e}, rng, 0.0, 1.0);
    const auto gt = Tensor<double>::uniform({1, 3, e, e}, rng, 0.0, 1.0);
    std::vector<Coordinate> coords;
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (std::size_t i = 0; i < 3 * opt.end_to_end_coords; ++i) {
      const auto tensor = pick(rng);
      coords.push_back({tensor, std::uniform_int_distribution<std::size_t>(0, x[tensor].numel() - 1)(rng)});
    }
    ScalarFn fn = [&](Tape<double>& tape, std::span<const V> in) {
      auto bound = detail::bind_slots(layout, in);
      auto pred = forward(tape.constant(raw), config, bound);
      return loss_total(tape.constant(gt), pred, LossConfig{}, extractor).total;
    };
    GradCheckOptions o = gopt;
    o.tolerance = opt.end_to_end_tolerance;
    record(check_coordinates("end-to-end loss (" + std::to_string(e) + "x" + std::to_string(e) + ")", x, fn, coords, o,
                             opt.end_to_end_coords));
  }
  return results;
}

}  // namespace delnet
