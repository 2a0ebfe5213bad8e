#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace histo {

enum class ErrorKind {
  MalformedFile,
  UnsupportedFormat,
  ImageTooSmall,
  ShapeMismatch,
  NonFiniteLoss,
  EmptyInput,
  MissingPatch,
  DuplicatePatch,
  InconsistentPatchCount,
  TestCountTooLarge,
  LengthMismatch,
  EmptyMatrix,
  InvalidArgument,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MissingPatch: return "MissingPatch";
    case ErrorKind::DuplicatePatch: return "DuplicatePatch";
    case ErrorKind::InconsistentPatchCount: return "InconsistentPatchCount";
    case ErrorKind::TestCountTooLarge: return "TestCountTooLarge";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Data or validation failure. Anything else escaping the library
/// (std::out_of_range from bounds checks, std::bad_alloc, ...) is an
/// internal error.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(format(kind, message, offset)),
        kind_(kind),
        offset_(offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }

 private:
  static std::string format(ErrorKind kind, const std::string& message,
                            std::optional<std::size_t> offset) {
    std::string out(to_string(kind));
    if (offset) out += " at offset " + std::to_string(*offset);
    out += ": " + message;
    return out;
  }

  ErrorKind kind_;
  std::optional<std::size_t> offset_;
};

}  // namespace histo
