#include "advforge/error.hpp"

#include <atomic>

#include "advforge/parallel.hpp"

namespace advforge {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyMesh: return "EmptyMesh";
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kInvalidMesh: return "InvalidMesh";
    case ErrorCode::kEmptyScene: return "EmptyScene";
    case ErrorCode::kUnnormalizedDirection: return "UnnormalizedDirection";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kUntaggedMesh: return "UntaggedMesh";
    case ErrorCode::kEmptyResult: return "EmptyResult";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kUnknownObject: return "UnknownObject";
    case ErrorCode::kDivergedTraining: return "DivergedTraining";
    case ErrorCode::kNoPositiveScenes: return "NoPositiveScenes";
    case ErrorCode::kNonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::kEmptyCache: return "EmptyCache";
    case ErrorCode::kSpaceTooLarge: return "SpaceTooLarge";
    case ErrorCode::kEmptyTarget: return "EmptyTarget";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

namespace {
std::atomic<int> g_workers{1};
}

int worker_count() noexcept { return g_workers.load(std::memory_order_relaxed); }
void set_worker_count(int n) noexcept { g_workers.store(n < 1 ? 1 : n, std::memory_order_relaxed); }

}  // namespace advforge
