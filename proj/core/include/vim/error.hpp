// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vim {

enum class ErrorKind {
  ShapeMismatch,
  NonFinite,
  NonPositiveDelta,
  DetachedTensor,
  StrategyMismatch,
  IndivisibleImage,
  GridMismatch,
  InsufficientPoints,
  NonFiniteLoss,
  BadMagic,
  VersionUnsupported,
  ManifestCorrupt,
  TruncatedPayload,
  ConfigInvalid,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it onto an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace vim
