#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advforge/detector.hpp"
#include "advforge/scene.hpp"
#include "advforge/vop.hpp"

namespace advforge {

struct SamplerConfig {
  std::uint64_t seed = 0;
  LidarConfig lidar;
  std::vector<std::string> environments{"open_lot", "street", "corridor"};
  PlacementRange range;
  double positive_fraction = 0.6;
  double object_fraction = 0.2;  // the rest are environment-only scenes
  double held_out_max_distance = 30.0;
  double sector_margin_deg = 10.0;
};

/// Pedestrian positives and environment / pool-object negatives, each scanned
/// in an azimuth sector around the placement.
class StandardSceneSampler final : public SceneSampler {
 public:
  StandardSceneSampler(SamplerConfig cfg, ObjectPool pool);

  TrainingScene sample(std::uint64_t index) const override;
  TrainingScene held_out(std::uint64_t index) const override;

 private:
  enum class Kind { kPedestrian, kObject, kEmpty };
  TrainingScene make(std::uint64_t scene_seed, Kind kind, const PlacementRange& range, std::size_t env_index) const;

  SamplerConfig cfg_;
  ObjectPool pool_;
  TriangleMesh pedestrian_;
};

}  // namespace advforge
