#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slf {

enum class ErrorCode {
  NonPositiveDepth,
  BadCalibration,
  OutOfSupport,
  ParamOutOfRange,
  NonWatertightMesh,
  InsufficientModels,
  MetaMismatch,
  DegenerateBank,
  LengthMismatch,
  IoError,
  BadMagic,
  VersionMismatch,
  CorruptFile,
  DegenerateCube,
  SizeMismatch,
  MissingFile,
  MaskSizeMismatch,
  TooFewPoints,
  DegenerateGround,
  EmptyFrustum,
  EmptyShape,
  PlacementFailure,
  DegenerateBox,
  SpecError,
  SegmenterUnreachable,
  BadResponse,
  BadPrompt,
  Cancelled,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for all library failures; `code()` identifies the contract violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace slf
