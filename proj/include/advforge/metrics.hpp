#pragma once

#include <span>

#include "advforge/detector.hpp"

namespace advforge {

inline constexpr double kDetectedIou = 0.5;
inline constexpr double kAttackedIou = 0.1;

struct TrialScore {
  bool detected = false;
  bool attacked = false;
  double max_iou = 0.0;  // over detections at or above the threshold
};

/// detected: some detection with confidence >= threshold has IoU > 0.5.
/// attacked: no such detection at all, or the best IoU among them is < 0.1.
/// Between the two lies a gray zone where both flags are false.
TrialScore score_trial(std::span<const Detection> dets, const Box3D& gt,
                       double conf_threshold = kDefaultConfThreshold);

}  // namespace advforge
