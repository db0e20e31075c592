#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace postrisk {

enum class FormatErrorKind {
  BadMagic,
  UnsupportedVersion,
  Truncated,
  DimensionMismatch,
  Corrupt,
  Io,
};

const char* to_string(FormatErrorKind kind);

/// Raised by the binary readers (SBEM stores, SBMX dumps, SBNN checkpoints).
/// The message names the file and the byte offset where reading stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& path, std::uint64_t offset, const std::string& detail);

  FormatErrorKind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  FormatErrorKind kind_;
  std::uint64_t offset_;
};

}  // namespace postrisk
