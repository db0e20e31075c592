#include "postrisk/format_error.hpp"

namespace postrisk {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::BadMagic: return "bad magic";
    case FormatErrorKind::UnsupportedVersion: return "unsupported version";
    case FormatErrorKind::Truncated: return "truncated file";
    case FormatErrorKind::DimensionMismatch: return "dimension mismatch";
    case FormatErrorKind::Corrupt: return "corrupt file";
    case FormatErrorKind::Io: return "i/o error";
  }
  return "format error";
}

FormatError::FormatError(FormatErrorKind kind, const std::string& path, std::uint64_t offset,
                         const std::string& detail)
    : std::runtime_error(path + ": offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

}  // namespace postrisk
