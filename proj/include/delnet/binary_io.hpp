#pragma once

// Little-endian binary containers: DLT1 (single tensor) plus the reader/writer
// primitives shared with the weights (DLW1) and optimizer (DLO1) files.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "delnet/tensor.hpp"

namespace delnet {

/// Malformed or truncated binary input. `offset` is the byte position where
/// decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error("format error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  } else {
    return v;
  }
}

}  // namespace detail

class ByteWriter {
 public:
  void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  template <typename U>
    requires std::is_arithmetic_v<U>
  void put(U v) {
    v = detail::byteswap_if_big(v);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }

  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }

  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (auto e : s) u32(static_cast<std::uint32_t>(e));
  }

  template <typename Stored, typename T>
  void values(const Tensor<T>& t) {
    for (T v : t.values()) put(static_cast<Stored>(v));
  }

  const std::vector<char>& bytes() const noexcept { return buf_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return ByteReader(std::vector<char>(std::istreambuf_iterator<char>(in), {}));
  }

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }

  void expect_magic(std::string_view magic) {
    const auto start = pos_;
    need(magic.size(), "magic");
    if (std::string_view(buf_.data() + pos_, magic.size()) != magic) {
      throw FormatError("bad magic, expected '" + std::string(magic) + "'", start);
    }
    pos_ += magic.size();
  }

  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  template <typename U>
    requires std::is_arithmetic_v<U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return detail::byteswap_if_big(v);
  }

  std::uint16_t u16(const char* what) { return get<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return get<std::uint64_t>(what); }

  Shape shape() {
    const auto start = pos_;
    const auto rank = u32("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank), start);
    Shape s(rank);
    for (auto& e : s) {
      const auto at = pos_;
      e = u32("extent");
      if (e == 0) throw FormatError("zero extent", at);
    }
    return s;
  }

  template <typename Stored, typename T>
  Tensor<T> values(Shape shape) {
    const auto n = delnet::numel(shape);
    need(n * sizeof(Stored), "tensor data");
    std::vector<T> data(n);
    for (auto& v : data) v = static_cast<T>(get<Stored>("tensor data"));
    return Tensor<T>(std::move(shape), std::move(data));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw FormatError(std::string("truncated input reading ") + what, pos_);
    }
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

inline constexpr std::string_view kTensorMagic = "DLT1";

/// DLT1: magic, u32 rank, u32 extents, then little-endian f32 scalars.
/// Double tensors are narrowed on write.
template <typename T>
void write_tensor(const Tensor<T>& t, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kTensorMagic);
  w.shape(t.shape());
  w.values<float>(t);
  w.save(path);
}

template <typename T>
Tensor<T> decode_tensor(ByteReader& r) {
  r.expect_magic(kTensorMagic);
  auto shape = r.shape();
  auto t = r.values<float, T>(std::move(shape));
  if (!r.at_end()) throw FormatError("trailing bytes after tensor data", r.offset());
  return t;
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  auto r = ByteReader::from_file(path);
  return decode_tensor<T>(r);
}

}  // namespace delnet
