#pragma once

// Forward pass: stem conv, flat chain of EAM blocks at full
// resolution, a UNet whose processing blocks are SCA blocks, and a 3-channel
// output head clamped to [0, 1].

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "delnet/arch_config.hpp"
#include "delnet/autograd.hpp"
#include "delnet/params.hpp"

namespace delnet {

/// Parameters placed on a tape, addressable by name.
template <typename T>
class BoundParams {
 public:
  BoundParams() = default;

  /// `learnable` marks every parameter as requiring a gradient.
  BoundParams(Tape<T>& tape, const ModelParams<T>& params, bool learnable) {
    for (const auto& [name, t] : params) {
      vars_.emplace(name, learnable ? tape.variable(t) : tape.constant(t));
      order_.push_back(name);
    }
  }

  /// Binds an existing tape variable, e.g. a gradient-check input.
  void bind(std::string name, Var<T> v) {
    if (!vars_.emplace(name, std::move(v)).second) throw ConfigError("model parameter '" + name + "' bound twice");
    order_.push_back(std::move(name));
  }

  const Var<T>& operator[](std::string_view name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("model parameter '" + std::string(name) + "' is not bound");
    return it->second;
  }

  /// Gradients after tape.backward(), as a parameter set in binding order.
  ModelParams<T> gradients(const Tape<T>& tape) const {
    ModelParams<T> grads;
    for (const auto& name : order_) grads.add(name, tape.grad(vars_.at(name)));
    return grads;
  }

 private:
  std::map<std::string, Var<T>, std::less<>> vars_;
  std::vector<std::string> order_;
};

namespace blocks {

template <typename T>
Var<T> conv(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix, std::size_t dilation = 1) {
  return conv2d_same(x, p[prefix + ".weight"], p[prefix + ".bias"], dilation);
}

template <typename T>
void check_width(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix) {
  require_rank4(x.value(), prefix);
  const std::size_t expected = p[prefix + ".conv1.weight"].dim(1);
  if (x.dim(1) != expected) {
    throw ShapeError(prefix + ": block width " + std::to_string(expected) + " does not match input " +
                     to_string(x.shape()));
  }
}

/// x * sigmoid(conv1x1(global_avg_pool(x))), per-channel gating.
template <typename T>
Var<T> channel_attention(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix) {
  return mul(x, sigmoid(conv(global_avg_pool(x), p, prefix)));
}

/// x * sigmoid(conv(concat(mean_c(x), max_c(x)))), per-pixel gating.
template <typename T>
Var<T> spatial_attention(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix) {
  auto pooled = concat_channels<T>({channel_pool(x, ChannelPoolMode::kMean), channel_pool(x, ChannelPoolMode::kMax)});
  return mul(x, sigmoid(conv(pooled, p, prefix)));
}

/// Spatial and channel attention block: transform with conv-PReLU-conv,
/// gate by channel and spatial attention, sum the two gated maps and add the
/// block input. With `attention == false` this is a plain residual conv pair.
template <typename T>
Var<T> sca_block(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix, bool attention = true) {
  check_width(x, p, prefix);
  auto t = conv(prelu(conv(x, p, prefix + ".conv1"), p[prefix + ".prelu.slope"]), p, prefix + ".conv2");
  if (!attention) return add(x, t);
  auto ca = channel_attention(t, p, prefix + ".ca");
  auto sa = spatial_attention(t, p, prefix + ".sa");
  return add(x, add(ca, sa));
}

/// Enhancement attention module: parallel dilated conv branches, 1x1 merge,
/// residual conv pair, channel attention, then the block skip.
template <typename T>
Var<T> eam_block(const Var<T>& x, const BoundParams<T>& p, const std::string& prefix,
                 const std::vector<std::size_t>& dilations) {
  require_rank4(x.value(), prefix);
  const std::size_t expected = p[prefix + ".res.conv1.weight"].dim(1);
  if (x.dim(1) != expected) {
    throw ShapeError(prefix + ": block width " + std::to_string(expected) + " does not match input " +
                     to_string(x.shape()));
  }
  std::vector<Var<T>> branches;
  for (std::size_t j = 0; j < dilations.size(); ++j) {
    const std::string b = prefix + ".branch." + std::to_string(j);
    branches.push_back(prelu(conv(x, p, b, dilations[j]), p[b + ".slope"]));
  }
  auto merged = conv(concat_channels(branches), p, prefix + ".merge");
  auto r = conv(prelu(conv(merged, p, prefix + ".res.conv1"), p[prefix + ".res.prelu.slope"]), p,
                prefix + ".res.conv2");
  auto local = add(merged, r);
  return add(x, channel_attention(local, p, prefix + ".ca"));
}

}  // namespace blocks

/// Rejects inputs that are not [N,1,H,W] with H, W divisible by
/// config.divisor() and values in [0, 1].
template <typename T>
void validate_raw_input(const Tensor<T>& raw, const ArchConfig& config) {
  require_rank4(raw, "forward");
  if (raw.dim(1) != 1) throw ShapeError("forward: raw input must have 1 channel, got " + to_string(raw.shape()));
  const std::size_t d = config.divisor();
  if (raw.dim(2) % d || raw.dim(3) % d) {
    throw ShapeError("forward: extents of " + to_string(raw.shape()) + " must be divisible by " + std::to_string(d));
  }
  for (T v : raw.values()) {
    if (!(v >= T{0} && v <= T{1})) throw RangeError("forward: raw values must lie in [0, 1]");
  }
}

/// Raw mosaic [N,1,H,W] -> sRGB [N,3,H,W] (R, G, B channel order).
template <typename T>
Var<T> forward(const Var<T>& raw, const ArchConfig& config, const BoundParams<T>& p) {
  config.validate();
  validate_raw_input(raw.value(), config);

  auto x = prelu(blocks::conv(raw, p, "stem.conv"), p["stem.prelu.slope"]);
  if (config.has_eam()) {
    for (std::size_t i = 0; i < config.eam_count; ++i) {
      x = blocks::eam_block(x, p, "eam." + std::to_string(i), config.eam_dilations);
    }
  }

  const std::size_t levels = config.unet_levels;
  std::vector<Var<T>> skips;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      x = blocks::sca_block(x, p, "enc." + std::to_string(l) + ".block." + std::to_string(b), config.has_sca());
    }
    if (l + 1 < levels) {
      skips.push_back(x);
      const std::string down = "enc." + std::to_string(l) + ".down";
      x = downsample(x, p[down + ".weight"], p[down + ".bias"]);
    }
  }
  for (std::size_t l = levels - 1; l-- > 0;) {
    const std::string pre = "dec." + std::to_string(l);
    auto up = upsample(x, p[pre + ".up.weight"], p[pre + ".up.bias"]);
    x = blocks::conv(concat_channels<T>({up, skips[l]}), p, pre + ".merge");
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      x = blocks::sca_block(x, p, pre + ".block." + std::to_string(b), config.has_sca());
    }
  }
  return clamp(blocks::conv(x, p, "head"), T{0}, T{1});
}

/// Inference without gradients.
template <typename T>
Tensor<T> forward(const Tensor<T>& raw, const ArchConfig& config, const ModelParams<T>& params) {
  Tape<T> tape;
  BoundParams<T> bound(tape, params, false);
  return forward(tape.constant(raw), config, bound).value();
}

}  // namespace delnet
