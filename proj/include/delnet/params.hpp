#pragma once

// Named parameter sets, their layout for a given ArchConfig, initialization,
// and the DLW1 weights container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "delnet/arch_config.hpp"
#include "delnet/binary_io.hpp"
#include "delnet/tensor.hpp"

namespace delnet {

/// Ordered name -> tensor map. Insertion order is the canonical order used by
/// the weights file and the optimizer.
template <typename T>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  const Tensor<T>& at(std::string_view name) const { return entries_[position(name)].second; }
  Tensor<T>& at(std::string_view name) { return entries_[position(name)].second; }

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t position(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// kResidualWeight marks the last conv of a residual branch; kOutputBias is
// the bias of the final RGB conv.
enum class ParamKind { kConvWeight, kResidualWeight, kBias, kOutputBias, kSlope };

struct ParamSlot {
  std::string name;
  Shape shape;
  ParamKind kind;
};

namespace detail {
inline void conv_slots(std::vector<ParamSlot>& out, const std::string& prefix, std::size_t cin, std::size_t cout,
                       std::size_t k, ParamKind kind = ParamKind::kConvWeight) {
  out.push_back({prefix + ".weight", {cout, cin, k, k}, kind});
  out.push_back({prefix + ".bias", {cout}, ParamKind::kBias});
}

inline void slope_slot(std::vector<ParamSlot>& out, const std::string& prefix, std::size_t c) {
  out.push_back({prefix + ".slope", {c}, ParamKind::kSlope});
}

// Residual conv pair shared by SCA blocks and the attention-free UNet blocks.
inline void block_slots(std::vector<ParamSlot>& out, const std::string& prefix, std::size_t c, bool attention) {
  conv_slots(out, prefix + ".conv1", c, c, 3);
  slope_slot(out, prefix + ".prelu", c);
  conv_slots(out, prefix + ".conv2", c, c, 3, ParamKind::kResidualWeight);
  if (attention) {
    conv_slots(out, prefix + ".ca", c, c, 1);
    conv_slots(out, prefix + ".sa", 2, 1, ArchConfig::kSpatialKernel);
  }
}

inline void eam_slots(std::vector<ParamSlot>& out, const std::string& prefix, std::size_t c,
                      const std::vector<std::size_t>& dilations) {
  for (std::size_t j = 0; j < dilations.size(); ++j) {
    const std::string branch = prefix + ".branch." + std::to_string(j);
    conv_slots(out, branch, c, c, 3);
    slope_slot(out, branch, c);
  }
  conv_slots(out, prefix + ".merge", c * dilations.size(), c, 1);
  conv_slots(out, prefix + ".res.conv1", c, c, 3);
  slope_slot(out, prefix + ".res.prelu", c);
  conv_slots(out, prefix + ".res.conv2", c, c, 3, ParamKind::kResidualWeight);
  conv_slots(out, prefix + ".ca", c, c, 1);
}
}  // namespace detail

/// Every learnable tensor of `config`, in forward-execution order.
inline std::vector<ParamSlot> param_layout(const ArchConfig& config) {
  config.validate();
  std::vector<ParamSlot> out;
  const std::size_t s = config.stem_width;
  detail::conv_slots(out, "stem.conv", 1, s, 3);
  detail::slope_slot(out, "stem.prelu", s);
  if (config.has_eam()) {
    for (std::size_t i = 0; i < config.eam_count; ++i) {
      detail::eam_slots(out, "eam." + std::to_string(i), s, config.eam_dilations);
    }
  }
  const auto& w = config.unet_widths;
  const std::size_t levels = config.unet_levels;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      detail::block_slots(out, "enc." + std::to_string(l) + ".block." + std::to_string(b), w[l], config.has_sca());
    }
    if (l + 1 < levels) detail::conv_slots(out, "enc." + std::to_string(l) + ".down", w[l], w[l + 1], 3);
  }
  for (std::size_t l = levels - 1; l-- > 0;) {
    const std::string p = "dec." + std::to_string(l);
    detail::conv_slots(out, p + ".up", w[l + 1], w[l], 3);
    detail::conv_slots(out, p + ".merge", 2 * w[l], w[l], 1);
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      detail::block_slots(out, p + ".block." + std::to_string(b), w[l], config.has_sca());
    }
  }
  detail::conv_slots(out, "head", w[0], 3, 3, ParamKind::kResidualWeight);
  out.back().kind = ParamKind::kOutputBias;
  return out;
}

inline constexpr double kInitSlope = 0.25;
inline constexpr double kInitOutput = 0.5;

/// He fan-in normal conv weights, zero biases, PReLU slopes 0.25. The last
/// conv of each residual branch starts at zero so every block begins as an
/// identity map. The head starts at zero weight and bias 0.5: a mid-gray
/// output sits inside the clamp, where gradients flow.
template <typename T = float>
ModelParams<T> init_params(const ArchConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams<T> params;
  for (const auto& slot : param_layout(config)) {
    switch (slot.kind) {
      case ParamKind::kConvWeight: {
        const double fan_in = static_cast<double>(slot.shape[1] * slot.shape[2] * slot.shape[3]);
        params.add(slot.name, Tensor<T>::normal(slot.shape, rng, T{0}, static_cast<T>(std::sqrt(2.0 / fan_in))));
        break;
      }
      case ParamKind::kResidualWeight:
      case ParamKind::kBias:
        params.add(slot.name, Tensor<T>::zeros(slot.shape));
        break;
      case ParamKind::kOutputBias:
        params.add(slot.name, Tensor<T>::full(slot.shape, static_cast<T>(kInitOutput)));
        break;
      case ParamKind::kSlope:
        params.add(slot.name, Tensor<T>::full(slot.shape, static_cast<T>(kInitSlope)));
        break;
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// DLW1 weights container
// ---------------------------------------------------------------------------

inline constexpr std::string_view kWeightsMagic = "DLW1";
inline constexpr std::uint32_t kWeightsVersion = 1;

template <typename T>
void encode_params(ByteWriter& w, const ModelParams<T>& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw ConfigError("parameter name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.raw(name);
    w.shape(t.shape());
    w.values<float>(t);
  }
}

template <typename T>
ModelParams<T> decode_params(ByteReader& r) {
  ModelParams<T> params;
  const auto count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = r.offset();
    const auto len = r.u16("name length");
    auto name = r.raw(len, "name");
    if (params.contains(name)) throw FormatError("duplicate tensor name '" + name + "'", at);
    auto shape = r.shape();
    params.add(std::move(name), r.values<float, T>(std::move(shape)));
  }
  return params;
}

/// Weights file: magic "DLW1", u32 version, u32 tensor count, then per tensor
/// u16 name length, UTF-8 name, u32 rank, u32 extents, f32 data.
template <typename T>
void save_params(const ModelParams<T>& params, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kWeightsMagic);
  w.u32(kWeightsVersion);
  encode_params(w, params);
  w.save(path);
}

/// Reads a DLW1 file without checking it against an architecture.
template <typename T = float>
ModelParams<T> read_params(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  r.expect_magic(kWeightsMagic);
  const auto at = r.offset();
  const auto version = r.u32("version");
  if (version != kWeightsVersion) throw FormatError("unsupported weights version " + std::to_string(version), at);
  auto params = decode_params<T>(r);
  if (!r.at_end()) throw FormatError("trailing bytes after weights", r.offset());
  return params;
}

/// Raised when a weights file does not match the expected architecture.
class ParamMismatchError : public std::runtime_error {
 public:
  ParamMismatchError(std::vector<std::string> missing, std::vector<std::string> extra,
                     std::vector<std::string> wrong_shape)
      : std::runtime_error(describe(missing, extra, wrong_shape)),
        missing_(std::move(missing)),
        extra_(std::move(extra)),
        wrong_shape_(std::move(wrong_shape)) {}

  const std::vector<std::string>& missing() const noexcept { return missing_; }
  const std::vector<std::string>& extra() const noexcept { return extra_; }
  const std::vector<std::string>& wrong_shape() const noexcept { return wrong_shape_; }

 private:
  static std::string describe(const std::vector<std::string>& missing, const std::vector<std::string>& extra,
                              const std::vector<std::string>& wrong) {
    std::string s = "weights do not match architecture";
    auto list = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      s += std::string("; ") + label + ":";
      for (const auto& n : names) s += " " + n;
    };
    list("missing", missing);
    list("extra", extra);
    list("wrong shape", wrong);
    return s;
  }

  std::vector<std::string> missing_, extra_, wrong_shape_;
};

/// Checks names and shapes of `params` against the layout of `config` and
/// returns them reordered into layout order.
template <typename T>
ModelParams<T> conform_params(const ModelParams<T>& params, const ArchConfig& config) {
  const auto layout = param_layout(config);
  std::vector<std::string> missing, extra, wrong;
  std::set<std::string, std::less<>> expected;
  ModelParams<T> ordered;
  for (const auto& slot : layout) {
    expected.insert(slot.name);
    if (!params.contains(slot.name)) {
      missing.push_back(slot.name);
    } else if (params.at(slot.name).shape() != slot.shape) {
      wrong.push_back(slot.name + " " + to_string(params.at(slot.name).shape()) + "!=" + to_string(slot.shape));
    } else {
      ordered.add(slot.name, params.at(slot.name));
    }
  }
  for (const auto& [name, t] : params) {
    if (!expected.count(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty() || !wrong.empty()) throw ParamMismatchError(missing, extra, wrong);
  return ordered;
}

template <typename T = float>
ModelParams<T> load_params(const std::filesystem::path& path, const ArchConfig& config) {
  return conform_params(read_params<T>(path), config);
}

/// Sidecar holding the ArchConfig document for a weights file.
inline std::filesystem::path config_path_for(const std::filesystem::path& weights) {
  auto p = weights;
  p.replace_extension(".cfg");
  return p;
}

template <typename T>
void save_model(const ModelParams<T>& params, const ArchConfig& config, const std::filesystem::path& weights) {
  save_params(params, weights);
  config.to_doc().save(config_path_for(weights));
}

/// Loads a weights file together with its sidecar config.
template <typename T = float>
std::pair<ArchConfig, ModelParams<T>> load_model(const std::filesystem::path& weights) {
  const auto config = ArchConfig::from_doc(KeyValueDoc::load(config_path_for(weights)));
  return {config, load_params<T>(weights, config)};
}

}  // namespace delnet
