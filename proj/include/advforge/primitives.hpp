#pragma once

#include "advforge/geometry.hpp"

namespace advforge::primitives {

// Procedural building blocks. Every builder emits outward-wound triangles
// with a single reflectance and tag.

/// Axis-aligned box; side faces are split into `z_bands` horizontal bands.
TriangleMesh box(const Vec3& lo, const Vec3& hi, double reflectance,
                 BodyRegion tag = BodyRegion::kNone, int z_bands = 1);

/// Horizontal rectangle at height z, two triangles.
TriangleMesh plane(double x0, double y0, double x1, double y1, double z, double reflectance);

/// Closed (optionally truncated) cone / cylinder between centres a and b.
TriangleMesh frustum(const Vec3& a, const Vec3& b, double radius_a, double radius_b, int segments,
                     double reflectance, BodyRegion tag = BodyRegion::kNone);

inline TriangleMesh cylinder(const Vec3& a, const Vec3& b, double radius, int segments,
                             double reflectance, BodyRegion tag = BodyRegion::kNone) {
  return frustum(a, b, radius, radius, segments, reflectance, tag);
}

TriangleMesh sphere(const Vec3& center, double radius, int stacks, int slices, double reflectance,
                    BodyRegion tag = BodyRegion::kNone);

/// Cylinder with hemispherical end caps; a and b are the cap centres. The
/// cylindrical part is split into `bands` rings along the axis.
TriangleMesh capsule(const Vec3& a, const Vec3& b, double radius, int segments, double reflectance,
                     BodyRegion tag = BodyRegion::kNone, int bands = 1);

}  // namespace advforge::primitives
