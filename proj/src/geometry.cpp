#include "advforge/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "advforge/error.hpp"

namespace advforge {

std::string_view to_string(BodyRegion region) noexcept {
  switch (region) {
    case BodyRegion::kFeet: return "feet";
    case BodyRegion::kLegs: return "legs";
    case BodyRegion::kTorso: return "torso";
    case BodyRegion::kArms: return "arms";
    case BodyRegion::kHead: return "head";
    case BodyRegion::kNone: break;
  }
  return "none";
}

std::optional<BodyRegion> parse_body_region(std::string_view name) noexcept {
  for (auto r : {BodyRegion::kNone, BodyRegion::kFeet, BodyRegion::kLegs, BodyRegion::kTorso,
                 BodyRegion::kArms, BodyRegion::kHead}) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

double normalize_yaw(double yaw) noexcept {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double y = std::fmod(yaw + std::numbers::pi, kTwoPi);
  if (y < 0) y += kTwoPi;
  y -= std::numbers::pi;
  return y >= std::numbers::pi ? -std::numbers::pi : y;
}

// ---------------------------------------------------------------------------
// TriangleMesh
// ---------------------------------------------------------------------------

double TriangleMesh::triangle_area(std::size_t tri) const {
  const Vec3 a = corner(tri, 0), b = corner(tri, 1), c = corner(tri, 2);
  return 0.5 * (b - a).cross(c - a).norm();
}

void TriangleMesh::append(const TriangleMesh& other) {
  const auto offset = static_cast<std::uint32_t>(vertices.size());
  const bool keep_tags = tagged() || other.tagged();
  if (keep_tags && tags.size() != triangles.size()) tags.assign(triangles.size(), BodyRegion::kNone);
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (std::size_t t = 0; t < other.triangles.size(); ++t) {
    const auto& tri = other.triangles[t];
    triangles.push_back({tri[0] + offset, tri[1] + offset, tri[2] + offset});
    reflectance.push_back(other.reflectance[t]);
    if (keep_tags) tags.push_back(other.tagged() ? other.tags[t] : BodyRegion::kNone);
  }
}

void TriangleMesh::validate() const {
  if (reflectance.size() != triangles.size()) {
    throw Error(ErrorCode::kInvalidMesh, "reflectance count does not match triangle count");
  }
  if (!tags.empty() && tags.size() != triangles.size()) {
    throw Error(ErrorCode::kInvalidMesh, "tag count does not match triangle count");
  }
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (auto idx : triangles[t]) {
      if (idx >= vertices.size()) {
        throw Error(ErrorCode::kInvalidMesh, "triangle " + std::to_string(t) + " index out of range");
      }
    }
    if (!(triangle_area(t) > 1e-12)) {
      throw Error(ErrorCode::kInvalidMesh, "triangle " + std::to_string(t) + " is degenerate");
    }
    if (!(reflectance[t] >= 0.0 && reflectance[t] <= 1.0)) {
      throw Error(ErrorCode::kInvalidMesh, "triangle " + std::to_string(t) + " reflectance outside [0,1]");
    }
  }
}

// ---------------------------------------------------------------------------
// Pose3D
// ---------------------------------------------------------------------------

Pose3D Pose3D::make(const Vec3& translation, double yaw, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::kInvalidConfig, "pose scale must be positive");
  return Pose3D{translation, normalize_yaw(yaw), scale};
}

Vec3 Pose3D::apply(const Vec3& v) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec3 sv = scale * v;
  return Vec3(c * sv.x() - s * sv.y(), s * sv.x() + c * sv.y(), sv.z()) + translation;
}

Pose3D Pose3D::then(const Pose3D& next) const {
  Pose3D out;
  out.scale = scale * next.scale;
  out.yaw = normalize_yaw(yaw + next.yaw);
  out.translation = next.apply(translation);
  return out;
}

TriangleMesh transform_mesh(const TriangleMesh& mesh, const Pose3D& pose) {
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = pose.apply(v);
  return out;
}

// ---------------------------------------------------------------------------
// Boxes and IoU
// ---------------------------------------------------------------------------

std::array<Vec2, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = 0.5 * size.x(), hw = 0.5 * size.y();
  const std::array<Vec2, 4> local = {Vec2(hl, hw), Vec2(-hl, hw), Vec2(-hl, -hw), Vec2(hl, -hw)};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i] = Vec2(center.x() + c * local[i].x() - s * local[i].y(),
                  center.y() + s * local[i].x() + c * local[i].y());
  }
  return out;
}

bool Box3D::contains(const Vec3& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec3 d = p - center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * size.x() && std::abs(ly) <= 0.5 * size.y() &&
         std::abs(d.z()) <= 0.5 * size.z();
}

Box3D points_aabb(std::span<const Vec3> points) {
  if (points.empty()) throw Error(ErrorCode::kEmptyMesh, "cannot bound an empty point set");
  Vec3 lo = points.front(), hi = points.front();
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Box3D box;
  box.center = 0.5 * (lo + hi);
  box.size = (hi - lo).cwiseMax(Vec3::Constant(kMinBoxExtent));
  box.yaw = 0.0;
  return box;
}

Box3D mesh_aabb(const TriangleMesh& mesh) {
  if (mesh.empty() || mesh.vertices.empty()) throw Error(ErrorCode::kEmptyMesh, "mesh has no triangles");
  // Only vertices referenced by triangles count.
  std::vector<Vec3> used;
  used.reserve(mesh.triangles.size() * 3);
  for (const auto& tri : mesh.triangles) {
    for (auto idx : tri) used.push_back(mesh.vertices[idx]);
  }
  return points_aabb(used);
}

namespace {

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double polygon_area(const std::vector<Vec2>& poly) {
  double area = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    area += cross2(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * area;
}

}  // namespace

double convex_overlap_area(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> output(subject.begin(), subject.end());
  for (std::size_t e = 0; e < clip.size() && !output.empty(); ++e) {
    const Vec2 a = clip[e];
    const Vec2 b = clip[(e + 1) % clip.size()];
    const Vec2 edge = b - a;
    auto inside = [&](const Vec2& p) { return cross2(edge, p - a) >= 0.0; };
    std::vector<Vec2> input;
    input.swap(output);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2 cur = input[i];
      const Vec2 prev = input[(i + input.size() - 1) % input.size()];
      const bool cur_in = inside(cur), prev_in = inside(prev);
      if (cur_in != prev_in) {
        const double d1 = cross2(edge, prev - a);
        const double d2 = cross2(edge, cur - a);
        const double t = d1 / (d1 - d2);
        output.push_back(prev + t * (cur - prev));
      }
      if (cur_in) output.push_back(cur);
    }
  }
  if (output.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(output));
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const auto ca = a.bev_corners();
  const auto cb = b.bev_corners();
  const double inter = convex_overlap_area(ca, cb);
  if (inter <= 0.0) return 0.0;
  const double uni = a.size.x() * a.size.y() + b.size.x() * b.size.y() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou3d(const Box3D& a, const Box3D& b) {
  const double dz = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
  if (dz <= 0.0) return 0.0;
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.size.x(), a.size.y());
  const double rb = 0.5 * std::hypot(b.size.x(), b.size.y());
  if (std::hypot(a.center.x() - b.center.x(), a.center.y() - b.center.y()) > ra + rb) return 0.0;
  const auto ca = a.bev_corners();
  const auto cb = b.bev_corners();
  const double area = convex_overlap_area(ca, cb);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Point clouds and nearest neighbours
// ---------------------------------------------------------------------------

std::vector<Vec3> PointCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position);
  return out;
}

namespace {
constexpr std::uint32_t kLeafSize = 8;
}  // namespace

NearestNeighborIndex::NearestNeighborIndex(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw Error(ErrorCode::kEmptyCloud, "nearest-neighbour index needs points");
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t NearestNeighborIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa != pb ? pa < pb : a < b;
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void NearestNeighborIndex::search(std::int32_t node, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.left < 0) {
    for (std::uint32_t s = n.begin; s < n.end; ++s) {
      const std::uint32_t idx = order_[s];
      const double d2 = (q - points_[idx]).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds coordinates >= split.
  const double diff = q[n.axis] - n.split;
  const std::int32_t near = diff < 0.0 ? n.left : n.right;
  const std::int32_t far = diff < 0.0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> NearestNeighborIndex::nearest(const Vec3& query) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

double nearest_distance_sum(std::span<const Vec3> queries, const NearestNeighborIndex& index) {
  double sum = 0.0;
  for (const auto& q : queries) sum += index.nearest(q).second;
  return sum;
}

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptyCloud, "chamfer needs two non-empty clouds");
  const NearestNeighborIndex index_a(std::vector<Vec3>(a.begin(), a.end()));
  const NearestNeighborIndex index_b(std::vector<Vec3>(b.begin(), b.end()));
  const double ab = nearest_distance_sum(a, index_b) / static_cast<double>(a.size());
  const double ba = nearest_distance_sum(b, index_a) / static_cast<double>(b.size());
  return 0.5 * ab + 0.5 * ba;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  const auto pa = a.positions();
  const auto pb = b.positions();
  return chamfer(pa, pb);
}

}  // namespace advforge
