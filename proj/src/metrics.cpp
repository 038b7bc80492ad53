#include "advforge/metrics.hpp"

#include <algorithm>

namespace advforge {

TrialScore score_trial(std::span<const Detection> dets, const Box3D& gt, double conf_threshold) {
  TrialScore s;
  bool any = false;
  for (const auto& d : dets) {
    if (!(d.confidence >= conf_threshold)) continue;
    any = true;
    s.max_iou = std::max(s.max_iou, iou3d(d.box, gt));
  }
  s.detected = any && s.max_iou > kDetectedIou;
  s.attacked = !any || s.max_iou < kAttackedIou;
  return s;
}

}  // namespace advforge
