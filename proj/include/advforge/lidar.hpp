#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "advforge/geometry.hpp"

namespace advforge {

// ============================================================================
// Configuration
// ============================================================================

struct LidarConfig {
  int beams = 64;
  double elevation_min_deg = -25.0;
  double elevation_max_deg = 15.0;
  double azimuth_step_deg = 0.2;
  double max_range = 120.0;
  Vec3 origin = Vec3(0.0, 0.0, 1.73);
  double noise_sigma = 0.01;   // range noise (m)
  double dropout_prob = 0.02;  // [0, 1)
  std::uint64_t seed = 0;
  // Only columns with azimuth in [min, max) are fired. The column grid itself
  // always spans the full revolution starting at -180 deg.
  double azimuth_min_deg = -180.0;
  double azimuth_max_deg = 180.0;

  /// Throws Error(kInvalidConfig).
  void validate() const;

  int columns() const;
  double elevation_deg(int beam) const;
  double azimuth_deg(int column) const { return -180.0 + column * azimuth_step_deg; }
  bool column_enabled(int column) const;
  Vec3 direction(int column, int beam) const;
};

/// Spin period; also the frame interval of scan sequences.
inline constexpr double kFramePeriod = 0.1;
/// Reference range of the intensity model.
inline constexpr double kIntensityReferenceRange = 10.0;

// ============================================================================
// BVH and ray casting
// ============================================================================

struct HitSource {
  std::uint32_t mesh = 0;
  std::uint32_t triangle = 0;

  auto operator<=>(const HitSource&) const = default;
};

struct Hit {
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  HitSource source;
  double incidence_cos = 0.0;
};

inline constexpr double kMinHitDistance = 1e-4;
inline constexpr double kParallelEpsilon = 1e-9;

/// Bounding volume hierarchy over the triangles of several meshes. Immutable
/// after construction; queries are const and thread safe.
class Bvh {
 public:
  /// Throws Error(kEmptyScene) when no mesh has triangles.
  explicit Bvh(std::span<const TriangleMesh> meshes);

  /// Nearest hit with t in (1e-4, max_range]. Equal-t ties go to the lowest
  /// (mesh id, triangle id). Throws Error(kUnnormalizedDirection).
  std::optional<Hit> ray_cast(const Vec3& origin, const Vec3& direction, double max_range) const;

  /// Same contract as ray_cast, testing every triangle. Reference path.
  std::optional<Hit> ray_cast_exhaustive(const Vec3& origin, const Vec3& direction, double max_range) const;

  double reflectance(const HitSource& src) const;
  std::size_t triangle_count() const noexcept { return tris_.size(); }
  std::size_t mesh_count() const noexcept { return mesh_count_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Tri {
    Vec3 v0, e1, e2, normal;
    HitSource source;
    double reflectance;
  };
  struct Node {
    Vec3 lo, hi;
    std::uint32_t first = 0;  // leaf: first triangle; inner: left child (right = left + 1)
    std::uint32_t count = 0;  // leaf triangle count; 0 for inner nodes
  };

  void build(std::uint32_t node, std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids);
  static bool intersect(const Tri& tri, const Vec3& o, const Vec3& d, double max_t, double& t);
  Hit make_hit(const Tri& tri, const Vec3& o, const Vec3& d, double t) const;

  std::vector<Tri> tris_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> mesh_reflectance_;
  std::size_t mesh_count_ = 0;
};

/// Möller–Trumbore test exposed for oracles: t of the hit or nullopt.
std::optional<double> intersect_triangle(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& origin,
                                         const Vec3& direction, double max_t);

double intensity_model(const Hit& hit, double reflectance);

// ============================================================================
// Scanning
// ============================================================================

/// One scan. Points are reported in the sensor frame of the frame start, i.e.
/// cfg.origin + range * direction; with ego motion this leaves rolling-shutter
/// skew uncorrected. Points are ordered by (column, beam).
struct ScanResult {
  PointCloud cloud;
  std::vector<HitSource> sources;
  std::vector<std::uint32_t> ray_ids;  // column * beams + beam
};

/// Angular region that can contain the given world-space geometry, for
/// splicing a target into a precomputed background scan.
struct RayWindow {
  bool everything = true;
  double center_azimuth_deg = 0.0;
  double half_azimuth_deg = 180.0;
  double min_elevation_deg = -90.0;
  double max_elevation_deg = 90.0;

  static RayWindow around(const Box3D& world_box, const LidarConfig& cfg, double extra_margin = 0.0);
  bool contains(const LidarConfig& cfg, int column, int beam) const;
};

struct ScanMotion {
  double velocity = 0.0;  // m/s along +x
  int frame = 0;

  /// Sensor origin offset for a column (frame offset plus in-spin advance).
  double column_offset(const LidarConfig& cfg, int column) const;
  double column_time(const LidarConfig& cfg, int column) const;
};

ScanResult scan(const Bvh& bvh, const LidarConfig& cfg, const ScanMotion& motion = {},
                const RayWindow* window = nullptr);

/// Replaces the rays of `background` that fall in `window` by `patch`
/// (a scan restricted to the same window). Ordering is preserved.
ScanResult splice(const ScanResult& background, const ScanResult& patch, const LidarConfig& cfg,
                  const RayWindow& window);

struct ScanFrame {
  ScanResult scan;
  Vec3 origin;  // world position of the sensor at the frame timestamp
  int frame = 0;
};

/// Frame k is scanned from cfg.origin + k * 0.1 s * velocity along +x with
/// per-column rolling shutter. `bvh_per_frame` may hold one BVH (static
/// scene) or one per frame.
std::vector<ScanFrame> scan_sequence(std::span<const Bvh* const> bvh_per_frame, const LidarConfig& cfg,
                                     double ego_velocity, int n_frames);

/// Per-ray noise stream seed.
std::uint64_t ray_seed(std::uint64_t seed, int frame, int column, int beam);

/// KITTI velodyne layout: little-endian float32 (x, y, z, intensity).
void write_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_kitti_bin(const std::filesystem::path& path);

}  // namespace advforge
