#pragma once

// AdamW training loop with per-step loss logging and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "delnet/isp_data.hpp"
#include "delnet/losses.hpp"
#include "delnet/model.hpp"
#include "delnet/params.hpp"

namespace delnet {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("optimizer eps must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  }
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

template <typename T>
struct OptimState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  ModelParams<T> m;  // first moments
  ModelParams<T> v;  // second moments

  static OptimState init(const ModelParams<T>& params, const AdamWConfig& hyper = {}) {
    hyper.validate();
    OptimState s;
    s.hyper = hyper;
    for (const auto& [name, t] : params) {
      s.m.add(name, Tensor<T>::zeros(t.shape()));
      s.v.add(name, Tensor<T>::zeros(t.shape()));
    }
    return s;
  }
  friend bool operator==(const OptimState&, const OptimState&) = default;
};

class MissingGradientError : public std::invalid_argument {
 public:
  explicit MissingGradientError(const std::string& name)
      : std::invalid_argument("adamw_step: no gradient for parameter '" + name + "'") {}
};

/// One AdamW update, in place:
///   theta *= 1 - lr * wd
///   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
///   theta -= lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimState<T>& state) {
  for (const auto& [name, t] : params) {
    if (!grads.contains(name)) throw MissingGradientError(name);
    if (grads.at(name).shape() != t.shape()) throw ShapeError("adamw_step " + name, t.shape(), grads.at(name).shape());
    if (!state.m.contains(name) || state.m.at(name).shape() != t.shape()) {
      throw ShapeError("adamw_step: optimizer state does not cover parameter '" + name + "'");
    }
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double t_step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t_step);
  const double c2 = 1.0 - std::pow(h.beta2, t_step);
  const double shrink = 1.0 - h.lr * h.weight_decay;
  for (auto& [name, theta] : params) {
    const auto& g = grads.at(name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + h.eps);
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) * shrink - h.lr * update);
    }
  }
}

// DLO1: magic, u32 version, u64 step, f64 lr/beta1/beta2/eps/wd, then the
// first- and second-moment sets encoded like DLW1 bodies.
inline constexpr std::string_view kOptimMagic = "DLO1";
inline constexpr std::uint32_t kOptimVersion = 1;

template <typename T>
void save_optim_state(const OptimState<T>& s, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kOptimMagic);
  w.u32(kOptimVersion);
  w.u64(s.step);
  for (double x : {s.hyper.lr, s.hyper.beta1, s.hyper.beta2, s.hyper.eps, s.hyper.weight_decay}) w.put(x);
  encode_params(w, s.m);
  encode_params(w, s.v);
  w.save(path);
}

template <typename T = float>
OptimState<T> read_optim_state(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic(kOptimMagic);
  const auto at = r.offset();
  const auto version = r.u32("version");
  if (version != kOptimVersion) throw FormatError("unsupported optimizer state version " + std::to_string(version), at);
  OptimState<T> s;
  s.step = r.u64("step");
  s.hyper.lr = r.get<double>("lr");
  s.hyper.beta1 = r.get<double>("beta1");
  s.hyper.beta2 = r.get<double>("beta2");
  s.hyper.eps = r.get<double>("eps");
  s.hyper.weight_decay = r.get<double>("weight decay");
  s.m = decode_params<T>(r);
  s.v = decode_params<T>(r);
  if (!r.at_end()) throw FormatError("trailing bytes after optimizer state", r.offset());
  if (s.m.names() != s.v.names()) throw FormatError("optimizer moment sets disagree", r.offset());
  return s;
}

class TrainingDivergedError : public std::runtime_error {
 public:
  explicit TrainingDivergedError(std::size_t step)
      : std::runtime_error("non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct TrainOptions {
  std::size_t steps = 200;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  bool augment = true;
  AdamWConfig optimizer{};
  std::size_t checkpoint_every = 0;  // 0 disables
  std::filesystem::path checkpoint_dir{};
  std::ostream* csv_log = nullptr;  // step,total,l1,ssim,perceptual
  std::function<void(std::size_t, const LossValues&)> on_step{};
};

struct TrainResult {
  ModelParams<float> params;
  OptimState<float> state;
  std::vector<LossValues> curve;
};

inline void write_checkpoint(const std::filesystem::path& dir, std::size_t step, const ArchConfig& config,
                             const ModelParams<float>& params, const OptimState<float>& state) {
  std::filesystem::create_directories(dir);
  const auto base = dir / ("step_" + std::to_string(step));
  save_model(params, config, base.string() + ".dlw");
  save_optim_state(state, base.string() + ".dlo");
}

namespace detail {
// Stacks single-image tensors along N.
inline Tensor<float> stack(const std::vector<const Tensor<float>*>& items) {
  const Shape& s = items.front()->shape();
  Shape out = s;
  out[0] = items.size();
  std::vector<float> data;
  data.reserve(numel(out));
  for (const auto* t : items) {
    if (t->shape() != s) throw ShapeError("train: batch items differ in shape", s, t->shape());
    data.insert(data.end(), t->values().begin(), t->values().end());
  }
  return Tensor<float>(std::move(out), std::move(data));
}
}  // namespace detail

/// Trains from init_params(config, seed), or from `initial` when given.
/// Shuffle order and flip draws come from a single mt19937_64 seeded with
/// `seed`, so runs are reproducible. Flipped pairs are rolled back to the
/// dataset's CFA phase before batching.
inline TrainResult train(const ArchConfig& config, const LossConfig& loss_config, const std::vector<TrainPair>& dataset,
                         const TrainOptions& opt, std::optional<ModelParams<float>> initial = std::nullopt) {
  config.validate();
  loss_config.validate();
  opt.optimizer.validate();
  if (dataset.empty()) throw DataError("train: dataset is empty");
  if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& p : dataset) validate_raw_input(p.raw.data, config);

  TrainResult result;
  result.params = initial ? conform_params(*initial, config) : init_params<float>(config, opt.seed);
  result.state = OptimState<float>::init(result.params, opt.optimizer);
  const RandomConvExtractor<float> extractor(loss_config.extractor_seed);

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  if (opt.csv_log) *opt.csv_log << "step,total,l1,ssim,perceptual\n";

  for (std::size_t step = 0; step < opt.steps; ++step) {
    std::vector<TrainPair> batch;
    for (std::size_t b = 0; b < opt.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const TrainPair& src = dataset[order[cursor++]];
      if (opt.augment) {
        const auto bits = rng();
        const bool hflip = bits & 1u, vflip = bits & 2u;
        batch.push_back(realign_cfa(augment_flip(src, hflip, vflip), src.raw.cfa));
      } else {
        batch.push_back(src);
      }
    }
    std::vector<const Tensor<float>*> raws, targets;
    for (const auto& p : batch) {
      raws.push_back(&p.raw.data);
      targets.push_back(&p.target);
    }

    Tape<float> tape;
    BoundParams<float> bound(tape, result.params, true);
    auto pred = forward(tape.constant(detail::stack(raws)), config, bound);
    for (float v : pred.value().values()) {
      if (!std::isfinite(v)) throw TrainingDivergedError(step);
    }
    auto gt = tape.constant(detail::stack(targets));
    auto loss = loss_total(gt, pred, loss_config, extractor);
    const auto values = LossValues::of(loss);
    if (!std::isfinite(values.total)) throw TrainingDivergedError(step);
    tape.backward(loss.total);
    adamw_step(result.params, bound.gradients(tape), result.state);

    result.curve.push_back(values);
    if (opt.csv_log) {
      *opt.csv_log << step << ',' << values.total << ',' << values.l1 << ',' << values.ssim << ',' << values.perceptual
                   << '\n';
    }
    if (opt.on_step) opt.on_step(step, values);
    if (opt.checkpoint_every && (step + 1) % opt.checkpoint_every == 0) {
      write_checkpoint(opt.checkpoint_dir, step + 1, config, result.params, result.state);
    }
  }
  return result;
}

}  // namespace delnet
