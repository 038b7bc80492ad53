#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advforge {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

enum class BodyRegion : std::uint8_t { kNone, kFeet, kLegs, kTorso, kArms, kHead };

std::string_view to_string(BodyRegion region) noexcept;
std::optional<BodyRegion> parse_body_region(std::string_view name) noexcept;

double normalize_yaw(double yaw) noexcept;  // into [-pi, pi)

// ============================================================================
// TriangleMesh
// ============================================================================

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<double> reflectance;  // per triangle, [0, 1]
  std::vector<BodyRegion> tags;     // per triangle; empty means untagged

  std::size_t triangle_count() const noexcept { return triangles.size(); }
  bool empty() const noexcept { return triangles.empty(); }
  bool tagged() const noexcept { return !tags.empty(); }

  Vec3 corner(std::size_t tri, int k) const { return vertices[triangles[tri][k]]; }
  double triangle_area(std::size_t tri) const;

  /// Appends `other`, reindexing its triangles. Tags are kept when both sides
  /// are tagged (an untagged side contributes kNone).
  void append(const TriangleMesh& other);

  /// Throws Error(kInvalidMesh) on out-of-range indices, degenerate triangles
  /// (area <= 1e-12), reflectance outside [0,1] or mismatched attribute sizes.
  void validate() const;
};

/// Uniform scale, then yaw about +z, then translation.
struct Pose3D {
  Vec3 translation = Vec3::Zero();
  double yaw = 0.0;
  double scale = 1.0;

  static Pose3D make(const Vec3& translation, double yaw, double scale = 1.0);

  Vec3 apply(const Vec3& v) const;
  /// Pose equivalent to applying *this first and `next` second.
  Pose3D then(const Pose3D& next) const;
};

TriangleMesh transform_mesh(const TriangleMesh& mesh, const Pose3D& pose);

// ============================================================================
// Box3D
// ============================================================================

struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // (length along local x, width along local y, height)
  double yaw = 0.0;

  double volume() const noexcept { return size.x() * size.y() * size.z(); }
  double bottom() const noexcept { return center.z() - 0.5 * size.z(); }
  double top() const noexcept { return center.z() + 0.5 * size.z(); }
  /// Counter-clockwise footprint corners.
  std::array<Vec2, 4> bev_corners() const;
  bool contains(const Vec3& p) const;
};

inline constexpr double kMinBoxExtent = 1e-3;

/// Tightest axis-aligned box around the vertices; extents clamped to 1e-3 m.
Box3D mesh_aabb(const TriangleMesh& mesh);
Box3D points_aabb(std::span<const Vec3> points);

/// Area of the intersection of two convex CCW polygons.
double convex_overlap_area(std::span<const Vec2> subject, std::span<const Vec2> clip);
double bev_iou(const Box3D& a, const Box3D& b);
double iou3d(const Box3D& a, const Box3D& b);

// ============================================================================
// PointCloud
// ============================================================================

struct CloudPoint {
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;
  double weight = 1.0;
};

struct PointCloud {
  std::vector<CloudPoint> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  std::vector<Vec3> positions() const;
};

/// Exact nearest-neighbour queries over a k-d tree. Equal distances go to the
/// lowest point index.
class NearestNeighborIndex {
 public:
  explicit NearestNeighborIndex(std::vector<Vec3> points);

  std::size_t size() const noexcept { return points_.size(); }
  /// Index and distance of the nearest stored point.
  std::pair<std::size_t, double> nearest(const Vec3& query) const;

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Symmetric mean nearest-neighbour distance. Throws Error(kEmptyCloud).
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);
double chamfer(const PointCloud& a, const PointCloud& b);

/// One direction of the chamfer sum against a prebuilt index: sum over a of
/// min distance to the index points.
double nearest_distance_sum(std::span<const Vec3> queries, const NearestNeighborIndex& index);

}  // namespace advforge
