#pragma once

// Analytic Mult-Adds and parameter accounting. One MAC is one composite
// multiply-accumulate; bias additions are not counted. Activations, pools,
// elementwise ops and the output clamp count one op per output element
// (global average pooling therefore contributes N*C). Concatenation and
// nearest-neighbour upsampling move data only and count zero.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "delnet/arch_config.hpp"
#include "delnet/kernels.hpp"

namespace delnet {

struct Extents {
  std::uint64_t n = 1, c = 1, h = 1, w = 1;
  std::uint64_t elements() const { return n * c * h * w; }
  friend bool operator==(const Extents&, const Extents&) = default;
};

enum class LayerKind {
  kConv,
  kPReLU,
  kSigmoid,
  kGlobalAvgPool,
  kChannelPool,
  kAdd,
  kMul,
  kConcat,
  kUpsampleNearest,
  kClamp,
};

struct LayerDesc {
  LayerKind kind = LayerKind::kConv;
  // Conv only.
  std::uint64_t out_channels = 0;
  std::uint64_t kernel = 1;
  Conv2dSpec spec{};
  // PReLU: per-channel slopes unless shared.
  bool shared_slope = false;
  // Concat: channels appended to the input.
  std::uint64_t extra_channels = 0;

  static LayerDesc conv(std::uint64_t cout, std::uint64_t k, Conv2dSpec s = {}) {
    LayerDesc d;
    d.kind = LayerKind::kConv;
    d.out_channels = cout;
    d.kernel = k;
    d.spec = s;
    return d;
  }
  static LayerDesc same_conv(std::uint64_t cout, std::uint64_t k, std::uint64_t dilation = 1) {
    return conv(cout, k, Conv2dSpec{1, dilation * (k - 1) / 2, dilation});
  }
  static LayerDesc of(LayerKind kind) {
    LayerDesc d;
    d.kind = kind;
    return d;
  }
  static LayerDesc concat(std::uint64_t extra) {
    LayerDesc d = of(LayerKind::kConcat);
    d.extra_channels = extra;
    return d;
  }
};

struct LayerCount {
  std::uint64_t mult_adds = 0;
  std::uint64_t params = 0;
  Extents output;
};

class UnsupportedLayerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Counts one layer applied to an input of extents `in`. Binary elementwise
/// layers take the (full) output extents as `in`.
inline LayerCount count_layer(const LayerDesc& d, const Extents& in) {
  LayerCount r;
  r.output = in;
  switch (d.kind) {
    case LayerKind::kConv: {
      const auto ho = conv_out_extent(in.h, d.kernel, d.spec);
      const auto wo = conv_out_extent(in.w, d.kernel, d.spec);
      r.output = {in.n, d.out_channels, ho, wo};
      r.mult_adds = in.n * ho * wo * d.out_channels * in.c * d.kernel * d.kernel;
      r.params = d.out_channels * in.c * d.kernel * d.kernel + d.out_channels;
      break;
    }
    case LayerKind::kPReLU:
      r.mult_adds = in.elements();
      r.params = d.shared_slope ? 1 : in.c;
      break;
    case LayerKind::kSigmoid:
    case LayerKind::kAdd:
    case LayerKind::kMul:
    case LayerKind::kClamp:
      r.mult_adds = in.elements();
      break;
    case LayerKind::kGlobalAvgPool:
      r.output = {in.n, in.c, 1, 1};
      r.mult_adds = r.output.elements();
      break;
    case LayerKind::kChannelPool:
      r.output = {in.n, 1, in.h, in.w};
      r.mult_adds = r.output.elements();
      break;
    case LayerKind::kConcat:
      r.output.c = in.c + d.extra_channels;
      break;
    case LayerKind::kUpsampleNearest:
      r.output = {in.n, in.c, 2 * in.h, 2 * in.w};
      break;
    default:
      throw UnsupportedLayerError("count_layer: unsupported layer kind");
  }
  return r;
}

struct LayerRecord {
  std::string name;
  std::uint64_t mult_adds = 0;
  std::uint64_t params = 0;
};

struct ComplexityReport {
  std::vector<LayerRecord> per_layer;
  std::uint64_t total_mult_adds = 0;
  std::uint64_t total_params = 0;
  Extents input;

  /// Mult-Adds in units of 10^12.
  double tera_mult_adds() const { return static_cast<double>(total_mult_adds) / 1e12; }
  /// Parameters in units of 10^6.
  double mega_params() const { return static_cast<double>(total_params) / 1e6; }
};

namespace detail {

// Walks layers in forward order, tracking the current extents.
class ComplexityWalker {
 public:
  explicit ComplexityWalker(Extents input) { report_.input = input; }

  Extents apply(const std::string& name, const LayerDesc& d, Extents in) {
    const auto c = count_layer(d, in);
    report_.per_layer.push_back({name, c.mult_adds, c.params});
    report_.total_mult_adds += c.mult_adds;
    report_.total_params += c.params;
    return c.output;
  }

  Extents conv(const std::string& name, Extents in, std::uint64_t cout, std::uint64_t k, std::uint64_t dilation = 1) {
    return apply(name, LayerDesc::same_conv(cout, k, dilation), in);
  }

  Extents op(const std::string& name, LayerKind kind, Extents in) { return apply(name, LayerDesc::of(kind), in); }

  void channel_attention(const std::string& p, Extents t) {
    auto g = op(p + ".pool", LayerKind::kGlobalAvgPool, t);
    g = conv(p, g, t.c, 1);
    op(p + ".sigmoid", LayerKind::kSigmoid, g);
    op(p + ".gate", LayerKind::kMul, t);
  }

  void spatial_attention(const std::string& p, Extents t) {
    auto m = op(p + ".pool_mean", LayerKind::kChannelPool, t);
    op(p + ".pool_max", LayerKind::kChannelPool, t);
    auto cat = apply(p + ".concat", LayerDesc::concat(1), m);
    auto s = conv(p, cat, 1, ArchConfig::kSpatialKernel);
    op(p + ".sigmoid", LayerKind::kSigmoid, s);
    op(p + ".gate", LayerKind::kMul, t);
  }

  Extents block(const std::string& p, Extents x, bool attention) {
    auto t = conv(p + ".conv1", x, x.c, 3);
    t = op(p + ".prelu", LayerKind::kPReLU, t);
    t = conv(p + ".conv2", t, x.c, 3);
    if (attention) {
      channel_attention(p + ".ca", t);
      spatial_attention(p + ".sa", t);
      op(p + ".combine", LayerKind::kAdd, t);
    }
    return op(p + ".skip", LayerKind::kAdd, x);
  }

  Extents eam(const std::string& p, Extents x, const std::vector<std::size_t>& dilations) {
    Extents cat = x;
    for (std::size_t j = 0; j < dilations.size(); ++j) {
      const std::string b = p + ".branch." + std::to_string(j);
      auto y = conv(b, x, x.c, 3, dilations[j]);
      op(b + ".prelu", LayerKind::kPReLU, y);
    }
    cat = apply(p + ".concat", LayerDesc::concat(x.c * (dilations.size() - 1)), x);
    auto m = conv(p + ".merge", cat, x.c, 1);
    auto r = conv(p + ".res.conv1", m, x.c, 3);
    r = op(p + ".res.prelu", LayerKind::kPReLU, r);
    r = conv(p + ".res.conv2", r, x.c, 3);
    op(p + ".res.skip", LayerKind::kAdd, r);
    channel_attention(p + ".ca", r);
    return op(p + ".skip", LayerKind::kAdd, x);
  }

  ComplexityReport take() { return std::move(report_); }

 private:
  ComplexityReport report_;
};

}  // namespace detail

/// Walks the layer sequence executed by forward() for a [1,1,H,W] input.
inline ComplexityReport count_model(const ArchConfig& config, std::uint64_t height, std::uint64_t width) {
  config.validate();
  const std::uint64_t d = config.divisor();
  if (height == 0 || width == 0 || height % d || width % d) {
    throw ShapeError("count_model: input " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be non-empty and divisible by " + std::to_string(d));
  }
  const Extents input{1, 1, height, width};
  detail::ComplexityWalker walk(input);

  auto x = walk.conv("stem.conv", input, config.stem_width, 3);
  x = walk.op("stem.prelu", LayerKind::kPReLU, x);
  if (config.has_eam()) {
    for (std::size_t i = 0; i < config.eam_count; ++i) {
      x = walk.eam("eam." + std::to_string(i), x, config.eam_dilations);
    }
  }

  const auto& widths = config.unet_widths;
  const std::size_t levels = config.unet_levels;
  std::vector<Extents> skips;
  for (std::size_t l = 0; l < levels; ++l) {
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      x = walk.block("enc." + std::to_string(l) + ".block." + std::to_string(b), x, config.has_sca());
    }
    if (l + 1 < levels) {
      skips.push_back(x);
      x = walk.apply("enc." + std::to_string(l) + ".down", LayerDesc::conv(widths[l + 1], 3, Conv2dSpec{2, 1, 1}), x);
    }
  }
  for (std::size_t l = levels - 1; l-- > 0;) {
    const std::string p = "dec." + std::to_string(l);
    x = walk.op(p + ".upsample", LayerKind::kUpsampleNearest, x);
    x = walk.conv(p + ".up", x, widths[l], 3);
    x = walk.apply(p + ".concat", LayerDesc::concat(skips[l].c), x);
    x = walk.conv(p + ".merge", x, widths[l], 1);
    for (std::size_t b = 0; b < config.sca_per_level; ++b) {
      x = walk.block(p + ".block." + std::to_string(b), x, config.has_sca());
    }
  }
  x = walk.conv("head", x, 3, 3);
  walk.op("clamp", LayerKind::kClamp, x);
  return walk.take();
}

/// Learnable scalar count, independent of input size.
inline std::uint64_t count_params(const ArchConfig& config) {
  const auto d = config.divisor();
  return count_model(config, d, d).total_params;
}

inline void print_report(std::ostream& os, const ComplexityReport& r, bool per_layer = true) {
  if (per_layer) {
    os << std::left << std::setw(36) << "layer" << std::right << std::setw(18) << "mult_adds" << std::setw(12)
       << "params" << "\n";
    for (const auto& l : r.per_layer) {
      os << std::left << std::setw(36) << l.name << std::right << std::setw(18) << l.mult_adds << std::setw(12)
         << l.params << "\n";
    }
  }
  os << "input: " << r.input.h << "x" << r.input.w << "x" << r.input.c << "\n";
  os << "total_mult_adds: " << r.total_mult_adds << " (" << std::fixed << std::setprecision(4) << r.tera_mult_adds()
     << " x 10^12)\n";
  os << "total_params: " << r.total_params << " (" << std::fixed << std::setprecision(4) << r.mega_params()
     << " x 10^6)\n";
  os.unsetf(std::ios::fixed);
}

struct AblationRow {
  Variant variant = Variant::kDelNet;
  std::uint64_t params = 0;
  std::uint64_t mult_adds = 0;
};

/// Counts for the four variants of `config` at HxW, in kAllVariants order.
inline std::vector<AblationRow> ablation_table(const ArchConfig& config, std::uint64_t height, std::uint64_t width) {
  std::vector<AblationRow> rows;
  for (auto v : kAllVariants) {
    const auto r = count_model(config.with_variant(v), height, width);
    rows.push_back({v, r.total_params, r.total_mult_adds});
  }
  return rows;
}

/// params(UNet) < params(UNet+SCA), params(UNet+EAM) <= params(DelNet).
inline bool params_monotone(const std::vector<AblationRow>& rows) {
  if (rows.size() != 4) return false;
  const auto u = rows[0].params, s = rows[1].params, e = rows[2].params, d = rows[3].params;
  return u < s && s <= d && u < e && e <= d;
}

inline void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "params" << std::setw(20)
     << "mult_adds" << std::setw(14) << "x10^12" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << variant_name(r.variant) << std::right << std::setw(12) << r.params
       << std::setw(20) << r.mult_adds << std::setw(14) << std::fixed << std::setprecision(4)
       << static_cast<double>(r.mult_adds) / 1e12 << "\n";
    os.unsetf(std::ios::fixed);
  }
}

}  // namespace delnet
