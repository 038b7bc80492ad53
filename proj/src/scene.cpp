#include "advforge/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "advforge/error.hpp"
#include "advforge/primitives.hpp"
#include "advforge/rng.hpp"

namespace advforge {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kGroundReflectance = 0.3;
constexpr double kPoleReflectance = 0.5;
constexpr double kCarReflectance = 0.7;
constexpr double kWallReflectance = 0.4;

void add_poles(Environment& env, Rng& rng, int count, double x_lo, double x_hi, double y_lo, double y_hi) {
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform(x_lo, x_hi);
    double y = rng.uniform(y_lo, y_hi);
    if (rng.uniform() < 0.5) y = -y;
    const double r = rng.uniform(0.08, 0.15);
    const double h = rng.uniform(2.5, 4.0);
    env.static_meshes.push_back(primitives::cylinder(Vec3(x, y, 0.0), Vec3(x, y, h), r, 8, kPoleReflectance));
  }
}

// Segment-vs-footprint test in the ground plane (slab method on the box's
// local axes).
bool segment_hits_box(const Vec2& a, const Vec2& b, const Box3D& box, double pad) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  auto local = [&](const Vec2& p) {
    const Vec2 d = p - box.center.head<2>();
    return Vec2(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
  };
  const Vec2 p0 = local(a), p1 = local(b);
  const Vec2 half(0.5 * box.size.x() + pad, 0.5 * box.size.y() + pad);
  double t0 = 0.0, t1 = 1.0;
  for (int k = 0; k < 2; ++k) {
    const double d = p1[k] - p0[k];
    if (std::abs(d) < 1e-12) {
      if (std::abs(p0[k]) > half[k]) return false;
      continue;
    }
    double ta = (-half[k] - p0[k]) / d, tb = (half[k] - p0[k]) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

std::vector<Box3D> Environment::obstacles() const {
  std::vector<Box3D> out;
  for (std::size_t i = 1; i < static_meshes.size(); ++i) out.push_back(mesh_aabb(static_meshes[i]));
  return out;
}

std::span<const std::string> environment_names() {
  static const std::array<std::string, 3> names{"open_lot", "street", "corridor"};
  return names;
}

Environment make_environment(const std::string& name, std::uint64_t seed) {
  Environment env;
  env.name = name;
  env.static_meshes.push_back(
      primitives::plane(-kGroundHalfExtent, -kGroundHalfExtent, kGroundHalfExtent, kGroundHalfExtent, 0.0, kGroundReflectance));
  Rng rng(derive_seed({seed, 0x656e76ULL}));
  if (name == "open_lot") {
    add_poles(env, rng, 14, 3.0, 60.0, 2.0, 30.0);
  } else if (name == "street") {
    for (int side : {-1, 1}) {
      double x = rng.uniform(2.0, 6.0);
      while (x < 70.0) {
        const double y = side * rng.uniform(3.3, 3.7);
        env.static_meshes.push_back(
            primitives::box(Vec3(x, y - 0.9, 0.0), Vec3(x + 4.4, y + 0.9, 1.5), kCarReflectance));
        x += 4.4 + rng.uniform(1.5, 6.0);
      }
    }
    add_poles(env, rng, 10, 3.0, 70.0, 5.5, 7.0);
  } else if (name == "corridor") {
    for (int side : {-1, 1}) {
      const double y = side * kCorridorHalfWidth;
      env.static_meshes.push_back(
          primitives::box(Vec3(-10.0, y - 0.1, 0.0), Vec3(100.0, y + 0.1, 3.0), kWallReflectance));
    }
    add_poles(env, rng, 4, 8.0, 60.0, 4.3, 4.6);
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown environment '" + name + "'");
  }
  return env;
}

void ScenarioConfig::validate() const {
  if (!(distance > 0.0)) throw Error(ErrorCode::kInvalidConfig, "distance must be > 0");
  if (!(angle_deg >= 0.0 && angle_deg < 360.0)) throw Error(ErrorCode::kInvalidConfig, "angle must be in [0, 360)");
  if (!std::isfinite(velocity)) throw Error(ErrorCode::kInvalidConfig, "velocity must be finite");
  if (n_frames < 1) throw Error(ErrorCode::kInvalidConfig, "n_frames must be >= 1");
  if (env.static_meshes.empty()) throw Error(ErrorCode::kInvalidConfig, "environment has no ground plane");
  lidar.validate();
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

void AttributeSpec::validate() const {
  if (intensity_factor && !(*intensity_factor > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "intensity_factor must be > 0");
  }
  if (connectivity_gap) {
    if (connectivity_gap->axis < 0 || connectivity_gap->axis > 2) {
      throw Error(ErrorCode::kInvalidConfig, "connectivity axis must be x, y or z");
    }
    if (!(connectivity_gap->width > 0.0)) throw Error(ErrorCode::kInvalidConfig, "connectivity width must be > 0");
  }
  if (occluder && *occluder != BodyRegion::kFeet && *occluder != BodyRegion::kTorso && *occluder != BodyRegion::kHead) {
    throw Error(ErrorCode::kInvalidConfig, "occluder region must be feet, torso or head");
  }
}

AttributedTarget apply_attributes(const TriangleMesh& ped, const AttributeSpec& spec) {
  spec.validate();
  if (!ped.tagged()) throw Error(ErrorCode::kUntaggedMesh, "attribute edits need body-region tags");
  AttributedTarget out;

  if (spec.occluder) {
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (std::size_t t = 0; t < ped.triangle_count(); ++t) {
      if (ped.tags[t] != *spec.occluder) continue;
      for (int k = 0; k < 3; ++k) {
        lo = lo.cwiseMin(ped.corner(t, k));
        hi = hi.cwiseMax(ped.corner(t, k));
      }
    }
    if (lo.x() > hi.x()) throw Error(ErrorCode::kEmptyResult, "no triangles tagged " + std::string(to_string(*spec.occluder)));
    lo.array() -= kOccluderInflation;
    hi.array() += kOccluderInflation;
    // A cube whose side is the largest inflated extent, centred on the region.
    const double side = (hi - lo).maxCoeff();
    const Vec3 c = 0.5 * (lo + hi);
    Vec3 cube_lo = c - Vec3::Constant(0.5 * side);
    Vec3 cube_hi = c + Vec3::Constant(0.5 * side);
    if (cube_lo.z() < 0.0) {
      cube_hi.z() -= cube_lo.z();
      cube_lo.z() = 0.0;
    }
    out.occluders.push_back(primitives::box(cube_lo, cube_hi, kOccluderReflectance));
  }

  auto removed = [&](std::size_t t) {
    if (std::find(spec.topology_mask.begin(), spec.topology_mask.end(), ped.tags[t]) != spec.topology_mask.end()) {
      return true;
    }
    if (spec.connectivity_gap) {
      const auto& g = *spec.connectivity_gap;
      double lo = 1e300, hi = -1e300;
      for (int k = 0; k < 3; ++k) {
        lo = std::min(lo, ped.corner(t, k)[g.axis]);
        hi = std::max(hi, ped.corner(t, k)[g.axis]);
      }
      // Open slab |coord - center| < width / 2.
      if (hi > g.center - 0.5 * g.width && lo < g.center + 0.5 * g.width) return true;
    }
    return false;
  };

  TriangleMesh& m = out.mesh;
  m.vertices = ped.vertices;
  for (std::size_t t = 0; t < ped.triangle_count(); ++t) {
    if (removed(t)) continue;
    m.triangles.push_back(ped.triangles[t]);
    double r = ped.reflectance[t];
    if (spec.intensity_factor) r = std::clamp(r * *spec.intensity_factor, 0.0, 1.0);
    m.reflectance.push_back(r);
    m.tags.push_back(ped.tags[t]);
  }
  if (m.empty()) throw Error(ErrorCode::kEmptyResult, "attribute edits removed every triangle");
  return out;
}

// ---------------------------------------------------------------------------
// Placement and composition
// ---------------------------------------------------------------------------

Pose3D place_target(const TriangleMesh& target, const ScenarioConfig& cfg) {
  const double a = cfg.angle_deg * kDeg;
  double min_z = 1e300;
  for (const auto& tri : target.triangles) {
    for (auto idx : tri) min_z = std::min(min_z, target.vertices[idx].z());
  }
  if (target.empty()) min_z = 0.0;
  const Vec3 t(cfg.lidar.origin.x() + cfg.distance * std::cos(a), cfg.lidar.origin.y() + cfg.distance * std::sin(a),
               -min_z);
  return Pose3D::make(t, a + std::numbers::pi);
}

Box3D target_box(std::span<const TriangleMesh> targets, const Pose3D& pose) {
  auto bounds = [&](bool tagged_only) {
    Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
    for (const auto& m : targets) {
      for (std::size_t t = 0; t < m.triangle_count(); ++t) {
        if (tagged_only && (!m.tagged() || m.tags[t] == BodyRegion::kNone)) continue;
        for (int k = 0; k < 3; ++k) {
          lo = lo.cwiseMin(m.corner(t, k));
          hi = hi.cwiseMax(m.corner(t, k));
        }
      }
    }
    return std::pair{lo, hi};
  };
  auto [lo, hi] = bounds(true);
  if (lo.x() > hi.x()) std::tie(lo, hi) = bounds(false);
  if (lo.x() > hi.x()) throw Error(ErrorCode::kEmptyScene, "target has no triangles");
  Box3D box;
  box.center = pose.apply(0.5 * (lo + hi));
  box.size = ((hi - lo) * pose.scale).cwiseMax(kMinBoxExtent);
  box.yaw = pose.yaw;
  return box;
}

ComposedScene compose(const Environment& env, std::span<const TriangleMesh> targets, const Pose3D& pose) {
  if (targets.empty()) throw Error(ErrorCode::kEmptyScene, "compose needs at least one target mesh");
  std::vector<TriangleMesh> meshes(env.static_meshes.begin(), env.static_meshes.end());
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& t : targets) {
    meshes.push_back(transform_mesh(t, pose));
    for (const auto& tri : meshes.back().triangles) {
      for (auto idx : tri) {
        lo = lo.cwiseMin(meshes.back().vertices[idx]);
        hi = hi.cwiseMax(meshes.back().vertices[idx]);
      }
    }
  }
  ComposedScene out;
  out.env_mesh_count = static_cast<std::uint32_t>(env.static_meshes.size());
  out.gt_box = target_box(targets, pose);
  out.target_bounds.center = 0.5 * (lo + hi);
  out.target_bounds.size = (hi - lo).cwiseMax(kMinBoxExtent);
  out.bvh = std::make_shared<const Bvh>(meshes);
  return out;
}

TriangleMesh build_pedestrian_template() {
  constexpr double r = 0.6;
  constexpr int seg = 10;
  TriangleMesh ped;
  for (double side : {-1.0, 1.0}) {
    ped.append(primitives::box(Vec3(-0.08, side * 0.1 - 0.05, 0.0), Vec3(0.18, side * 0.1 + 0.05, 0.08), r,
                               BodyRegion::kFeet));
    ped.append(primitives::capsule(Vec3(0.0, side * 0.1, 0.15), Vec3(0.0, side * 0.1, 0.86), 0.07, seg, r,
                                   BodyRegion::kLegs, 14));
    ped.append(primitives::capsule(Vec3(0.0, side * 0.25, 1.38), Vec3(0.02, side * 0.25, 0.84), 0.045, seg, r,
                                   BodyRegion::kArms, 11));
  }
  ped.append(primitives::box(Vec3(-0.12, -0.19, 0.88), Vec3(0.12, 0.19, 1.45), r, BodyRegion::kTorso, 12));
  ped.append(primitives::cylinder(Vec3(0.0, 0.0, 1.45), Vec3(0.0, 0.0, 1.53), 0.05, seg, r, BodyRegion::kHead));
  ped.append(primitives::sphere(Vec3(0.0, 0.0, 1.63), 0.12, 8, 12, r, BodyRegion::kHead));
  return ped;
}

// ---------------------------------------------------------------------------
// Placement sampling
// ---------------------------------------------------------------------------

bool placement_clear(const Environment& env, const Placement& p, const Vec3& sensor_origin, double radius) {
  const double a = p.angle_deg * kDeg;
  const Vec2 o = sensor_origin.head<2>();
  const Vec2 target = o + p.distance * Vec2(std::cos(a), std::sin(a));
  if (env.name == "corridor" && std::abs(target.y()) > kCorridorHalfWidth - 0.5 - radius) return false;
  for (const auto& box : env.obstacles()) {
    if (segment_hits_box(target, target, box, radius)) return false;
    // Line of sight to the target's near side.
    const Vec2 near = target - radius * (target - o).normalized();
    if (segment_hits_box(o, near, box, 0.05)) return false;
  }
  return true;
}

Placement sample_placement(const Environment& env, const PlacementRange& range, const Vec3& sensor_origin,
                           std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x706c6163ULL}));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Placement p;
    p.distance = rng.uniform(range.min_distance, range.max_distance);
    const double bearing = rng.uniform(-range.max_abs_bearing_deg, range.max_abs_bearing_deg);
    if (std::abs(p.distance * std::sin(bearing * kDeg)) > range.max_abs_lateral) continue;
    p.angle_deg = bearing < 0.0 ? bearing + 360.0 : bearing;
    if (p.angle_deg >= 360.0) p.angle_deg = 0.0;
    if (placement_clear(env, p, sensor_origin)) return p;
  }
  throw Error(ErrorCode::kInvalidConfig, "no clear placement found in environment '" + env.name + "'");
}

LidarConfig sector_config(const LidarConfig& cfg, const Box3D& bounds, double margin_deg) {
  LidarConfig out = cfg;
  const Vec3 v = bounds.center - cfg.origin;
  const double d_xy = std::hypot(v.x(), v.y());
  const double radius = 0.5 * std::hypot(bounds.size.x(), bounds.size.y());
  if (d_xy <= radius + 1e-6) return out;
  const double center = std::atan2(v.y(), v.x()) / kDeg;
  const double half = std::asin(radius / d_xy) / kDeg + margin_deg;
  const double lo = center - half, hi = center + half;
  if (lo < -180.0 || hi > 180.0) return out;  // wraps; keep the full circle
  out.azimuth_min_deg = std::max(cfg.azimuth_min_deg, lo);
  out.azimuth_max_deg = std::min(cfg.azimuth_max_deg, hi);
  if (!(out.azimuth_min_deg < out.azimuth_max_deg)) return cfg;
  return out;
}

}  // namespace advforge
