#pragma once

// Bayer raw and sRGB image handling: PNG I/O, RAW-RGB pairs in a raw/ + rgb/
// layout, flip augmentation with CFA phase tracking, and a toy synthesizer.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "delnet/binary_io.hpp"
#include "delnet/kv_config.hpp"
#include "delnet/tensor.hpp"

namespace delnet {

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Decoded PNG samples, interleaved, row-major. 16-bit samples are kept whole.
struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  int bit_depth = 8;         // 8 or 16
  std::vector<std::uint16_t> samples;
};

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}
}  // namespace detail

/// Reads gray or RGB PNGs (palette and alpha are converted/stripped).
inline PngImage read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "'");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  PngImage img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian host order for memcpy below
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.channels != 1 && img.channels != 3) {
    throw IoError("unsupported PNG channel count " + std::to_string(img.channels) + " in '" + path.string() + "'");
  }
  const std::size_t n = img.width * img.height * img.channels;
  img.samples.resize(n);
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      img.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    }
  } else {
    std::copy(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(n), img.samples.begin());
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("write_png: channels must be 1 or 3");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw IoError("write_png: bit depth must be 8 or 16");
  if (img.samples.size() != img.width * img.height * img.channels) throw IoError("write_png: sample count mismatch");
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  const std::size_t bytes = img.bit_depth / 8;
  const std::size_t rowbytes = img.width * img.channels * bytes;
  std::vector<std::uint8_t> buffer(rowbytes * img.height);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes == 1) {
      buffer[i] = static_cast<std::uint8_t>(img.samples[i]);
    } else {
      buffer[2 * i] = static_cast<std::uint8_t>(img.samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<std::uint8_t>(img.samples[i] & 0xFF);
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG '" + path.string() + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// [1,C,H,W] (C = 1 or 3) or [C,H,W] tensor in [0,1] to an 8-bit PNG,
/// quantized with round-half-up: byte = floor(255 v + 0.5).
template <typename T>
void write_image(const Tensor<T>& t, const std::filesystem::path& path) {
  const Shape& s = t.shape();
  const bool rank4 = s.size() == 4 && s[0] == 1;
  if (!(rank4 || s.size() == 3)) throw ShapeError("write_image: expected [1,C,H,W] or [C,H,W], got " + to_string(s));
  const std::size_t c = rank4 ? s[1] : s[0], h = s[s.size() - 2], w = s[s.size() - 1];
  if (c != 1 && c != 3) throw ShapeError("write_image: expected 1 or 3 channels, got " + to_string(s));
  PngImage img{w, h, c, 8, std::vector<std::uint16_t>(w * h * c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) {
      const double v = static_cast<double>(t[ch * h * w + i]);
      if (!(v >= 0.0 && v <= 1.0)) throw RangeError("write_image: values must lie in [0, 1]");
      img.samples[i * c + ch] = static_cast<std::uint16_t>(std::floor(v * 255.0 + 0.5));
    }
  }
  write_png(path, img);
}

/// PNG to a [1,C,H,W] tensor normalized by 2^bit_depth - 1.
inline Tensor<float> png_to_tensor(const PngImage& img) {
  const double scale = 1.0 / ((1u << img.bit_depth) - 1);
  Tensor<float> t({1, img.channels, img.height, img.width});
  const std::size_t plane = img.width * img.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t ch = 0; ch < img.channels; ++ch) {
      t[ch * plane + i] = static_cast<float>(img.samples[i * img.channels + ch] * scale);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Bayer raw and training pairs
// ---------------------------------------------------------------------------

/// 2x2 colour filter layout, row-major: "RGGB" means (0,0)=R, (0,1)=G,
/// (1,0)=G, (1,1)=B.
enum class CfaPattern { kRGGB, kBGGR, kGRBG, kGBRG };

inline std::string_view cfa_name(CfaPattern p) {
  switch (p) {
    case CfaPattern::kRGGB: return "RGGB";
    case CfaPattern::kBGGR: return "BGGR";
    case CfaPattern::kGRBG: return "GRBG";
    case CfaPattern::kGBRG: return "GBRG";
  }
  return "?";
}

inline CfaPattern parse_cfa(std::string_view name) {
  for (auto p : {CfaPattern::kRGGB, CfaPattern::kBGGR, CfaPattern::kGRBG, CfaPattern::kGBRG}) {
    if (cfa_name(p) == name) return p;
  }
  throw ConfigError("unknown CFA pattern '" + std::string(name) + "'");
}

/// Colour index (0 = R, 1 = G, 2 = B) of pixel (y, x).
inline int cfa_color(CfaPattern p, std::size_t y, std::size_t x) {
  const char c = cfa_name(p)[(y % 2) * 2 + (x % 2)];
  return c == 'R' ? 0 : (c == 'G' ? 1 : 2);
}

/// Phase after mirroring an even-sized mosaic.
inline CfaPattern flip_cfa(CfaPattern p, bool horizontal, bool vertical) {
  std::string s(cfa_name(p));
  if (horizontal) {
    std::swap(s[0], s[1]);
    std::swap(s[2], s[3]);
  }
  if (vertical) {
    std::swap(s[0], s[2]);
    std::swap(s[1], s[3]);
  }
  return parse_cfa(s);
}

struct RawImage {
  Tensor<float> data;  // [1,1,H,W] in [0,1]
  CfaPattern cfa = CfaPattern::kRGGB;
  int bit_depth = 8;

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

struct TrainPair {
  RawImage raw;
  Tensor<float> target;  // [1,3,H,W] sRGB in [0,1]
  std::string id;

  friend bool operator==(const TrainPair&, const TrainPair&) = default;
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error("data error: " + what) {}
};

namespace detail {
inline void check_unit_tensor(const Tensor<float>& t, const std::string& what) {
  for (float v : t.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw RangeError(what + ": values outside [0, 1]");
  }
}
}  // namespace detail

/// Raw mosaic from a single-channel 8/16-bit PNG or a DLT1 tensor file
/// (extension .dlt). DLT1 values are taken as already normalized.
inline RawImage load_raw(const std::filesystem::path& path, CfaPattern cfa = CfaPattern::kRGGB) {
  RawImage raw;
  raw.cfa = cfa;
  if (path.extension() == ".dlt") {
    auto t = read_tensor<float>(path);
    if (t.rank() == 2) t = t.reshaped({1, 1, t.dim(0), t.dim(1)});
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
      throw DataError("raw tensor '" + path.string() + "' must be [H,W] or [1,1,H,W], got " + to_string(t.shape()));
    }
    raw.data = std::move(t);
    raw.bit_depth = 16;
  } else {
    const auto png = read_png(path);
    if (png.channels != 1) throw DataError("raw PNG '" + path.string() + "' must be single-channel");
    raw.data = png_to_tensor(png);
    raw.bit_depth = png.bit_depth;
  }
  detail::check_unit_tensor(raw.data, "raw '" + path.string() + "'");
  if (raw.data.dim(2) % 2 || raw.data.dim(3) % 2) {
    throw ShapeError("raw '" + path.string() + "' has odd extents " + to_string(raw.data.shape()));
  }
  return raw;
}

inline Tensor<float> load_rgb(const std::filesystem::path& path) {
  const auto png = read_png(path);
  if (png.channels != 3) throw DataError("RGB PNG '" + path.string() + "' must have 3 channels");
  return png_to_tensor(png);
}

inline TrainPair load_pair(const std::filesystem::path& raw_path, const std::filesystem::path& rgb_path,
                           CfaPattern cfa = CfaPattern::kRGGB) {
  TrainPair pair;
  pair.raw = load_raw(raw_path, cfa);
  pair.target = load_rgb(rgb_path);
  const Shape& a = pair.raw.data.shape();
  const Shape& b = pair.target.shape();
  if (a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("pair " + raw_path.string() + " / " + rgb_path.string() + ": raw " + to_string(a) +
                     " and rgb " + to_string(b) + " differ in extent");
  }
  pair.id = raw_path.stem().string();
  return pair;
}

/// Mirrors every channel plane of a rank-4 tensor.
template <typename T>
Tensor<T> flip_planes(const Tensor<T>& t, bool horizontal, bool vertical) {
  require_rank4(t, "flip");
  const std::size_t h = t.dim(2), w = t.dim(3);
  Tensor<T> out(t.shape());
  for (std::size_t p = 0; p < t.dim(0) * t.dim(1); ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = vertical ? h - 1 - y : y;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = horizontal ? w - 1 - x : x;
        out[(p * h + y) * w + x] = t[(p * h + sy) * w + sx];
      }
    }
  }
  return out;
}

/// Flips raw and target identically and shifts the CFA phase to match.
inline TrainPair augment_flip(const TrainPair& pair, bool horizontal, bool vertical) {
  TrainPair out = pair;
  if (!horizontal && !vertical) return out;
  out.raw.data = flip_planes(pair.raw.data, horizontal, vertical);
  out.raw.cfa = flip_cfa(pair.raw.cfa, horizontal, vertical);
  out.target = flip_planes(pair.target, horizontal, vertical);
  return out;
}

/// Cyclic roll of every plane by (dy, dx).
template <typename T>
Tensor<T> roll_planes(const Tensor<T>& t, std::size_t dy, std::size_t dx) {
  require_rank4(t, "roll");
  const std::size_t h = t.dim(2), w = t.dim(3);
  Tensor<T> out(t.shape());
  for (std::size_t p = 0; p < t.dim(0) * t.dim(1); ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out[(p * h + y) * w + x] = t[(p * h + (y + dy) % h) * w + (x + dx) % w];
      }
    }
  }
  return out;
}

/// Rolls raw and target by one pixel where needed so the mosaic phase becomes
/// `want`. Extents are even, so the wrapped row/column keeps the lattice.
inline TrainPair realign_cfa(const TrainPair& pair, CfaPattern want) {
  for (std::size_t dy = 0; dy < 2; ++dy) {
    for (std::size_t dx = 0; dx < 2; ++dx) {
      bool match = true;
      for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x = 0; x < 2; ++x) match = match && cfa_color(pair.raw.cfa, y + dy, x + dx) == cfa_color(want, y, x);
      }
      if (!match) continue;
      TrainPair out = pair;
      if (dy || dx) {
        out.raw.data = roll_planes(pair.raw.data, dy, dx);
        out.target = roll_planes(pair.target, dy, dx);
      }
      out.raw.cfa = want;
      return out;
    }
  }
  throw DataError("cannot realign CFA phase " + std::string(cfa_name(pair.raw.cfa)) + " to " +
                  std::string(cfa_name(want)));
}

/// Reference bilinear demosaic: each missing colour is the mean of the
/// same-colour samples in the 3x3 neighbourhood that lie inside the image.
inline Tensor<float> bilinear_demosaic(const RawImage& raw) {
  const auto& d = raw.data;
  const std::size_t h = d.dim(2), w = d.dim(3);
  Tensor<float> out({1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::array<double, 3> sum{};
      std::array<int, 3> count{};
      const int own = cfa_color(raw.cfa, y, x);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
          const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          const int c = cfa_color(raw.cfa, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          // A pixel's own colour comes from the pixel itself only.
          if (c == own && (dy || dx)) continue;
          sum[c] += d[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          ++count[c];
        }
      }
      for (int c = 0; c < 3; ++c) out[(c * h + y) * w + x] = count[c] ? static_cast<float>(sum[c] / count[c]) : 0.0f;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthOptions {
  std::array<float, 3> gains{0.55f, 1.0f, 0.7f};
  float noise_sigma = 0.01f;
  std::size_t shapes = 4;
};

/// Procedural sRGB target (colour gradients plus discs and boxes) mosaicked
/// to RGGB as raw = clamp(gain_c * target_c + noise, 0, 1).
inline TrainPair synth_pair(std::uint64_t seed, std::size_t height, std::size_t width, const SynthOptions& opt = {}) {
  if (height % 2 || width % 2 || height == 0 || width == 0) {
    throw ShapeError("synth_pair: extents must be even and non-zero, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double hd = static_cast<double>(height), wd = static_cast<double>(width);

  std::array<std::array<double, 3>, 3> grad{};  // per channel: offset, x slope, y slope
  for (auto& g : grad) g = {0.15 + 0.5 * u(rng), 0.6 * (u(rng) - 0.5), 0.6 * (u(rng) - 0.5)};
  struct Shape2 {
    bool disc;
    double cy, cx, ry, rx;
    std::array<double, 3> color;
  };
  std::vector<Shape2> shapes;
  for (std::size_t i = 0; i < opt.shapes; ++i) {
    Shape2 s{u(rng) < 0.5, u(rng) * hd, u(rng) * wd, (0.08 + 0.2 * u(rng)) * hd, (0.08 + 0.2 * u(rng)) * wd, {}};
    for (auto& c : s.color) c = u(rng);
    shapes.push_back(s);
  }

  TrainPair pair;
  pair.id = "synth_" + std::to_string(seed);
  pair.target = Tensor<float>({1, 3, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double fy = y / hd, fx = x / wd;
      std::array<double, 3> rgb{};
      for (int c = 0; c < 3; ++c) rgb[c] = grad[c][0] + grad[c][1] * fx + grad[c][2] * fy;
      for (const auto& s : shapes) {
        const double dy = (y - s.cy) / s.ry, dx = (x - s.cx) / s.rx;
        const bool inside = s.disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) rgb = s.color;
      }
      for (int c = 0; c < 3; ++c) {
        pair.target[(c * height + y) * width + x] = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  pair.raw.cfa = CfaPattern::kRGGB;
  pair.raw.bit_depth = 16;
  pair.raw.data = Tensor<float>({1, 1, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const int c = cfa_color(pair.raw.cfa, y, x);
      double v = opt.gains[c] * pair.target[(c * height + y) * width + x];
      if (opt.noise_sigma > 0) v += opt.noise_sigma * noise(rng);
      pair.raw.data[y * width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Dataset layout: <root>/raw/<id>.png and <root>/rgb/<id>.png, optionally
// restricted by an index file with one id per line.
// ---------------------------------------------------------------------------

inline std::vector<std::string> list_dataset_ids(const std::filesystem::path& root,
                                                 const std::filesystem::path& index = {}) {
  std::vector<std::string> ids;
  if (!index.empty()) {
    std::ifstream in(index);
    if (!in) throw IoError("cannot open index '" + index.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
      auto id = std::string(KeyValueDoc::trim(line));
      if (!id.empty() && id[0] != '#') ids.push_back(id);
    }
    return ids;
  }
  const auto dir = root / "raw";
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset has no raw/ directory: '" + root.string() + "'");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && (e.path().extension() == ".png" || e.path().extension() == ".dlt")) {
      ids.push_back(e.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::filesystem::path raw_path_for(const std::filesystem::path& root, const std::string& id) {
  auto png = root / "raw" / (id + ".png");
  if (std::filesystem::exists(png)) return png;
  auto dlt = root / "raw" / (id + ".dlt");
  return std::filesystem::exists(dlt) ? dlt : png;
}

inline std::vector<TrainPair> load_dataset(const std::filesystem::path& root, const std::filesystem::path& index = {},
                                           CfaPattern cfa = CfaPattern::kRGGB) {
  std::vector<TrainPair> pairs;
  for (const auto& id : list_dataset_ids(root, index)) {
    pairs.push_back(load_pair(raw_path_for(root, id), root / "rgb" / (id + ".png"), cfa));
    pairs.back().id = id;
  }
  return pairs;
}

/// Writes pairs in the dataset layout: raw as 16-bit gray PNG, rgb as 8-bit PNG.
inline void write_dataset(const std::filesystem::path& root, const std::vector<TrainPair>& pairs) {
  std::filesystem::create_directories(root / "raw");
  std::filesystem::create_directories(root / "rgb");
  std::ofstream index(root / "index.txt");
  for (const auto& p : pairs) {
    const auto& r = p.raw.data;
    PngImage raw{r.dim(3), r.dim(2), 1, 16, std::vector<std::uint16_t>(r.numel())};
    for (std::size_t i = 0; i < r.numel(); ++i) {
      raw.samples[i] = static_cast<std::uint16_t>(std::floor(static_cast<double>(r[i]) * 65535.0 + 0.5));
    }
    write_png(root / "raw" / (p.id + ".png"), raw);
    write_image(p.target, root / "rgb" / (p.id + ".png"));
    index << p.id << "\n";
  }
}

}  // namespace delnet
