#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "delnet/kv_config.hpp"

namespace delnet {

/// Ablation variants. "UNet" keeps the residual conv pairs but drops the
/// attention paths and the EAM chain.
enum class Variant { kUNet, kUNetSca, kUNetEam, kDelNet };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kUNet: return "UNet";
    case Variant::kUNetSca: return "UNet+SCA";
    case Variant::kUNetEam: return "UNet+EAM";
    case Variant::kDelNet: return "DelNet";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kUNet, Variant::kUNetSca, Variant::kUNetEam, Variant::kDelNet}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected UNet, UNet+SCA, UNet+EAM or DelNet)");
}

inline constexpr Variant kAllVariants[] = {Variant::kUNet, Variant::kUNetSca, Variant::kUNetEam, Variant::kDelNet};

struct ArchConfig {
  // Defaults are calibrated so that the model has ~2.65e6 parameters and
  // ~0.51e12 Mult-Adds on a 2976x4000 raw frame.
  std::size_t stem_width = 8;
  std::size_t eam_count = 3;
  std::vector<std::size_t> eam_dilations{1, 2, 3};
  std::size_t unet_levels = 5;
  std::vector<std::size_t> unet_widths{8, 16, 32, 64, 224};
  std::size_t sca_per_level = 2;
  Variant variant = Variant::kDelNet;

  // Kernel of the spatial-attention conv over the [mean, max] channel map.
  static constexpr std::size_t kSpatialKernel = 5;

  bool has_sca() const { return variant == Variant::kUNetSca || variant == Variant::kDelNet; }
  bool has_eam() const { return variant == Variant::kUNetEam || variant == Variant::kDelNet; }

  /// Input extents must be multiples of this.
  std::size_t divisor() const { return std::size_t{1} << (unet_levels - 1); }

  ArchConfig with_variant(Variant v) const {
    ArchConfig c = *this;
    c.variant = v;
    return c;
  }

  void validate() const {
    if (stem_width == 0) throw ConfigError("stem_width must be >= 1");
    if (unet_levels == 0 || unet_levels > 12) throw ConfigError("unet_levels must be in [1, 12]");
    if (unet_widths.size() != unet_levels) {
      throw ConfigError("unet_widths has " + std::to_string(unet_widths.size()) + " entries, expected unet_levels = " +
                        std::to_string(unet_levels));
    }
    for (std::size_t i = 0; i < unet_widths.size(); ++i) {
      if (unet_widths[i] == 0) throw ConfigError("unet_widths entries must be >= 1");
      if (i && unet_widths[i] <= unet_widths[i - 1]) throw ConfigError("unet_widths must be strictly increasing");
    }
    if (unet_widths.front() != stem_width) throw ConfigError("unet_widths[0] must equal stem_width");
    if (sca_per_level == 0) throw ConfigError("sca_per_level must be >= 1");
    if (has_eam()) {
      if (eam_count == 0) throw ConfigError("eam_count must be >= 1 for variants with EAM");
      if (eam_dilations.empty()) throw ConfigError("eam_dilations must not be empty");
      for (auto d : eam_dilations) {
        if (d == 0) throw ConfigError("eam_dilations entries must be >= 1");
      }
    }
  }

  KeyValueDoc to_doc() const {
    KeyValueDoc doc;
    doc.set("variant", std::string(variant_name(variant)));
    doc.set("stem_width", std::to_string(stem_width));
    doc.set("eam_count", std::to_string(eam_count));
    doc.set("eam_dilations", join(eam_dilations));
    doc.set("unet_levels", std::to_string(unet_levels));
    doc.set("unet_widths", join(unet_widths));
    doc.set("sca_per_level", std::to_string(sca_per_level));
    return doc;
  }

  /// Keys absent from `doc` keep the values already in `*this`; unknown keys
  /// are rejected.
  ArchConfig merged(const KeyValueDoc& doc) const {
    ArchConfig c = *this;
    for (const auto& key : doc.keys()) {
      const auto& v = doc.get(key);
      if (key == "variant") c.variant = parse_variant(v);
      else if (key == "stem_width") c.stem_width = parse_size(v, key);
      else if (key == "eam_count") c.eam_count = parse_size(v, key);
      else if (key == "eam_dilations") c.eam_dilations = parse_size_list(v, key);
      else if (key == "unet_levels") c.unet_levels = parse_size(v, key);
      else if (key == "unet_widths") c.unet_widths = parse_size_list(v, key);
      else if (key == "sca_per_level") c.sca_per_level = parse_size(v, key);
      else throw ConfigError("unknown architecture key '" + key + "'");
    }
    c.validate();
    return c;
  }

  static ArchConfig from_doc(const KeyValueDoc& doc) { return ArchConfig{}.merged(doc); }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

}  // namespace delnet
