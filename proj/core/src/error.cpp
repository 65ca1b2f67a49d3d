// SPDX-License-Identifier: Apache-2.0
#include "vim/error.hpp"

namespace vim {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonPositiveDelta: return "NonPositiveDelta";
    case ErrorKind::DetachedTensor: return "DetachedTensor";
    case ErrorKind::StrategyMismatch: return "StrategyMismatch";
    case ErrorKind::IndivisibleImage: return "IndivisibleImage";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::InsufficientPoints: return "InsufficientPoints";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::ManifestCorrupt: return "ManifestCorrupt";
    case ErrorKind::TruncatedPayload: return "TruncatedPayload";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace vim
