#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advforge/geometry.hpp"
#include "advforge/lidar.hpp"

namespace advforge {

// ============================================================================
// Environments
// ============================================================================

/// Static surroundings. static_meshes[0] is always the ground plane.
struct Environment {
  std::string name;
  std::vector<TriangleMesh> static_meshes;

  /// Footprints of everything except the ground, for placement checks.
  std::vector<Box3D> obstacles() const;
};

inline constexpr double kGroundHalfExtent = 150.0;

/// "open_lot", "street" or "corridor". Pole positions depend on `seed`.
/// Throws Error(kInvalidConfig) for other names.
Environment make_environment(const std::string& name, std::uint64_t seed = 0);
std::span<const std::string> environment_names();

// ============================================================================
// Scenario
// ============================================================================

struct ScenarioConfig {
  Environment env;
  double distance = 10.0;  // m
  double angle_deg = 0.0;  // bearing of the target from the sensor, [0, 360)
  double velocity = 0.0;   // ego speed along +x, m/s
  int n_frames = 1;
  LidarConfig lidar;

  /// Throws Error(kInvalidConfig).
  void validate() const;
};

/// Lateral limit of the corridor; placements must stay inside it.
inline constexpr double kCorridorHalfWidth = 5.0;

// ============================================================================
// Attribute manipulation
// ============================================================================

struct ConnectivityGap {
  int axis = 2;         // 0 = x, 1 = y, 2 = z (template frame)
  double width = 0.1;   // m
  double center = 1.0;  // m
};

struct AttributeSpec {
  std::vector<BodyRegion> topology_mask;
  std::optional<ConnectivityGap> connectivity_gap;
  std::optional<double> intensity_factor;
  std::optional<BodyRegion> occluder;  // feet, torso or head

  bool empty() const noexcept {
    return topology_mask.empty() && !connectivity_gap && !intensity_factor && !occluder;
  }
  /// Throws Error(kInvalidConfig).
  void validate() const;
};

struct AttributedTarget {
  TriangleMesh mesh;
  std::vector<TriangleMesh> occluders;
};

inline constexpr double kOccluderReflectance = 0.8;
inline constexpr double kOccluderInflation = 0.02;

/// Throws Error(kUntaggedMesh) when ped has no tags and Error(kEmptyResult)
/// when every triangle is removed.
AttributedTarget apply_attributes(const TriangleMesh& ped, const AttributeSpec& spec);

// ============================================================================
// Placement and composition
// ============================================================================

/// Yaw turns the target's local +x towards the sensor; the lowest vertex
/// lands on z = 0.
Pose3D place_target(const TriangleMesh& target, const ScenarioConfig& cfg);

struct ComposedScene {
  std::shared_ptr<const Bvh> bvh;
  Box3D gt_box;
  std::uint32_t env_mesh_count = 0;
  Box3D target_bounds;  // axis-aligned bounds of every placed target mesh

  bool is_target(const HitSource& src) const noexcept { return src.mesh >= env_mesh_count; }
};

/// The environment meshes come first in the BVH, followed by each target mesh
/// posed with `pose`. The ground-truth box is oriented with the placement yaw
/// and bounds the body-tagged triangles (all target triangles when none are
/// tagged). Throws Error(kEmptyScene) for an empty target list.
ComposedScene compose(const Environment& env, std::span<const TriangleMesh> targets, const Pose3D& pose);

/// Oriented box in the target frame around tagged triangles (or all
/// triangles), mapped through `pose`.
Box3D target_box(std::span<const TriangleMesh> targets, const Pose3D& pose);

/// Humanoid of tagged primitives, about 1.75 m tall, feet on z = 0, facing +x.
TriangleMesh build_pedestrian_template();

// ============================================================================
// Placement sampling
// ============================================================================

struct PlacementRange {
  double min_distance = 5.0;
  double max_distance = 40.0;
  double max_abs_bearing_deg = 45.0;
  /// Sampled placements keep the target this far inside the detector extent.
  double max_abs_lateral = 24.0;
};

struct Placement {
  double distance = 0.0;
  double angle_deg = 0.0;
};

/// True when a target of footprint radius `radius` at the placement is clear
/// of obstacles and visible along the line of sight.
bool placement_clear(const Environment& env, const Placement& p, const Vec3& sensor_origin, double radius = 0.6);

/// Rejection sampler; throws Error(kInvalidConfig) after 1000 failed draws.
Placement sample_placement(const Environment& env, const PlacementRange& range, const Vec3& sensor_origin,
                           std::uint64_t seed);

// ============================================================================
// Rendering helpers
// ============================================================================

/// Restricts the lidar to an azimuth sector around the target bounds.
/// Detections near the target are unaffected since every ray that can reach
/// the target's neighbourhood is kept.
LidarConfig sector_config(const LidarConfig& cfg, const Box3D& target_bounds, double margin_deg = 10.0);

}  // namespace advforge
