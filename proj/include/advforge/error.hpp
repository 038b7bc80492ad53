#pragma once

#include <stdexcept>
#include <string>

namespace advforge {

enum class ErrorCode {
  kEmptyMesh,
  kEmptyCloud,
  kInvalidMesh,
  kEmptyScene,
  kUnnormalizedDirection,
  kInvalidConfig,
  kUntaggedMesh,
  kEmptyResult,
  kIndexOutOfRange,
  kUnknownObject,
  kDivergedTraining,
  kNoPositiveScenes,
  kNonPositiveTemperature,
  kEmptyCache,
  kSpaceTooLarge,
  kEmptyTarget,
  kIo,
};

const char* to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace advforge
