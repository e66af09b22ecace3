#pragma once

// Composite training loss:
//   total = lambda1 * L1_modified + lambda2 * (1 - MS-SSIM) + lambda3 * L_perceptual
// Norms are means over elements, logs are natural.

#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "delnet/autograd.hpp"
#include "delnet/kv_config.hpp"
#include "delnet/metrics.hpp"

namespace delnet {

struct LossConfig {
  double lambda1 = 0.85;
  double lambda2 = 0.15;
  double lambda3 = 1.0;
  double epsilon = 1e-3;
  std::uint64_t extractor_seed = 1234;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss weights must be non-negative");
    if (!(epsilon > 0)) throw ConfigError("loss epsilon must be positive");
  }
};

/// Feature maps used by the perceptual term. Implementations must be
/// deterministic and must not hold learnable state.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Var<T>> features(const Var<T>& image) const = 0;
};

/// Fixed random conv pyramid (3 -> 16 -> 32 -> 64 channels, 3x3 kernels,
/// stride 2 entering stages two and three, leaky ReLU 0.2). Weights are drawn
/// once from `seed` with He scaling and never trained.
template <typename T>
class RandomConvExtractor final : public FeatureExtractor<T> {
 public:
  static constexpr std::size_t kWidths[] = {3, 16, 32, 64};
  static constexpr double kLeak = 0.2;

  explicit RandomConvExtractor(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t s = 0; s + 1 < std::size(kWidths); ++s) {
      const std::size_t cin = kWidths[s], cout = kWidths[s + 1];
      const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * 9));
      weights_.push_back(Tensor<T>::normal({cout, cin, 3, 3}, rng, T{0}, static_cast<T>(std_dev)));
      biases_.push_back(Tensor<T>::zeros({cout}));
    }
  }

  std::size_t stages() const noexcept { return weights_.size(); }
  const Tensor<T>& weight(std::size_t stage) const { return weights_.at(stage); }
  const Tensor<T>& bias(std::size_t stage) const { return biases_.at(stage); }
  static Conv2dSpec stage_spec(std::size_t stage) { return Conv2dSpec{stage == 0 ? 1u : 2u, 1, 1}; }

  std::vector<Var<T>> features(const Var<T>& image) const override {
    require_rank4(image.value(), "perceptual extractor");
    if (image.dim(1) != kWidths[0]) {
      throw ShapeError("perceptual extractor: expected 3-channel input, got " + to_string(image.shape()));
    }
    auto& tape = *image.tape();
    auto leak = tape.constant(Tensor<T>::scalar(static_cast<T>(kLeak)));
    std::vector<Var<T>> out;
    Var<T> x = image;
    for (std::size_t s = 0; s < weights_.size(); ++s) {
      x = prelu(conv2d(x, tape.constant(weights_[s]), tape.constant(biases_[s]), stage_spec(s)), leak);
      out.push_back(x);
    }
    return out;
  }

 private:
  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

namespace detail {
template <typename T>
void check_loss_pair(const std::string& op, const Var<T>& gt, const Var<T>& pred) {
  if (gt.tape() != pred.tape()) throw TapeError(op + ": operands live on different tapes");
  if (gt.shape() != pred.shape()) throw ShapeError(op, gt.shape(), pred.shape());
}
}  // namespace detail

/// mean|I - I'| + mean|log max(I, eps) - log max(I', eps)|.
template <typename T>
Var<T> l1_modified(const Var<T>& gt, const Var<T>& pred, T epsilon) {
  detail::check_loss_pair("l1_modified", gt, pred);
  for (const auto* v : {&gt, &pred}) {
    for (T x : v->value().values()) {
      if (!(x >= T{0})) throw RangeError("l1_modified: values must be non-negative");
    }
  }
  auto pixel = mean(abs(sub(gt, pred)));
  auto logs = mean(abs(sub(log(clamp_min(gt, epsilon)), log(clamp_min(pred, epsilon)))));
  return add(pixel, logs);
}

template <typename T>
Var<T> loss_ms_ssim(const Var<T>& gt, const Var<T>& pred) {
  detail::check_loss_pair("loss_ms_ssim", gt, pred);
  auto one = pred.tape()->constant(Tensor<T>::scalar(T{1}));
  return sub(one, ms_ssim(gt, pred));
}

/// Mean squared feature difference, averaged over the extractor's layers.
template <typename T>
Var<T> loss_perceptual(const Var<T>& gt, const Var<T>& pred, const FeatureExtractor<T>& extractor) {
  detail::check_loss_pair("loss_perceptual", gt, pred);
  const auto fa = extractor.features(gt);
  const auto fb = extractor.features(pred);
  if (fa.empty() || fa.size() != fb.size()) throw ShapeError("loss_perceptual: extractor returned no features");
  Var<T> total;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    auto term = mean(square(sub(fa[i], fb[i])));
    total = i ? add(total, term) : term;
  }
  return mul_scalar(total, T{1} / static_cast<T>(fa.size()));
}

template <typename T>
struct LossBreakdown {
  Var<T> total;
  Var<T> l1;
  Var<T> ssim;
  Var<T> perceptual;
};

template <typename T>
LossBreakdown<T> loss_total(const Var<T>& gt, const Var<T>& pred, const LossConfig& config,
                            const FeatureExtractor<T>& extractor) {
  config.validate();
  LossBreakdown<T> out;
  out.l1 = l1_modified(gt, pred, static_cast<T>(config.epsilon));
  out.ssim = loss_ms_ssim(gt, pred);
  out.perceptual = loss_perceptual(gt, pred, extractor);
  out.total = add(add(mul_scalar(out.l1, static_cast<T>(config.lambda1)), mul_scalar(out.ssim, static_cast<T>(config.lambda2))),
                  mul_scalar(out.perceptual, static_cast<T>(config.lambda3)));
  return out;
}

/// Scalar values of a breakdown, for logging.
struct LossValues {
  double total = 0, l1 = 0, ssim = 0, perceptual = 0;

  template <typename T>
  static LossValues of(const LossBreakdown<T>& b) {
    return {static_cast<double>(b.total.value().item()), static_cast<double>(b.l1.value().item()),
            static_cast<double>(b.ssim.value().item()), static_cast<double>(b.perceptual.value().item())};
  }
};

/// One structured record per training step.
inline void write_loss_record(std::ostream& os, std::size_t step, const LossValues& v) {
  os << "step=" << step << " total=" << v.total << " l1=" << v.l1 << " ssim=" << v.ssim
     << " perceptual=" << v.perceptual << "\n";
}

}  // namespace delnet
