#pragma once

// Little-endian byte-level helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "postrisk/format_error.hpp"

namespace postrisk::detail {

class ByteWriter {
 public:
  template <typename U>
    requires std::is_unsigned_v<U>
  void put(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<char>((value >> (8 * i)) & 0xffu));
    }
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_raw(std::string_view s) { bytes_.append(s); }

  template <typename T>
  void put_reals(std::span<const T> values) {
    for (T v : values) {
      if constexpr (sizeof(T) == 4) put_f32(v);
      else put_f64(v);
    }
  }

  const std::string& bytes() const noexcept { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& path() const noexcept { return path_; }

  [[noreturn]] void fail(FormatErrorKind kind, const std::string& detail) const {
    throw FormatError(kind, path_, pos_, detail);
  }

  void require(std::uint64_t n, const char* what) const {
    if (remaining() < n) fail(FormatErrorKind::Truncated, std::string("truncated file while reading ") + what);
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  U get(const char* what) {
    require(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }
  float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  double get_f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }

  std::string get_raw(std::uint64_t n, const char* what) {
    require(n, what);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  void get_reals(std::span<T> out, const char* what) {
    require(out.size() * sizeof(T), what);
    for (T& v : out) {
      if constexpr (sizeof(T) == 4) v = get_f32(what);
      else v = get_f64(what);
    }
  }

 private:
  std::string data_;
  std::string path_;
  std::uint64_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::Io, path, 0, "cannot open file for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, path, 0, "cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorKind::Io, path, 0, "write failed");
}

}  // namespace postrisk::detail
