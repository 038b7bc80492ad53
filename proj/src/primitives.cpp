#include "advforge/primitives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace advforge::primitives {

namespace {

void push_tri(TriangleMesh& m, std::uint32_t a, std::uint32_t b, std::uint32_t c, double refl, BodyRegion tag) {
  m.triangles.push_back({a, b, c});
  m.reflectance.push_back(refl);
  m.tags.push_back(tag);
}

std::uint32_t push_vertex(TriangleMesh& m, const Vec3& v) {
  m.vertices.push_back(v);
  return static_cast<std::uint32_t>(m.vertices.size() - 1);
}

// Orthonormal pair perpendicular to axis.
std::pair<Vec3, Vec3> basis(const Vec3& axis) {
  const Vec3 n = axis.normalized();
  const Vec3 helper = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 u = n.cross(helper).normalized();
  const Vec3 v = n.cross(u);
  return {u, v};
}

}  // namespace

TriangleMesh box(const Vec3& lo, const Vec3& hi, double reflectance, BodyRegion tag, int z_bands) {
  TriangleMesh m;
  const int bands = std::max(1, z_bands);
  // Rings of four corners (counter-clockwise seen from +z), bottom to top.
  for (int k = 0; k <= bands; ++k) {
    const double z = k == bands ? hi.z() : lo.z() + (hi.z() - lo.z()) * k / bands;
    m.vertices.emplace_back(lo.x(), lo.y(), z);
    m.vertices.emplace_back(hi.x(), lo.y(), z);
    m.vertices.emplace_back(hi.x(), hi.y(), z);
    m.vertices.emplace_back(lo.x(), hi.y(), z);
  }
  auto at = [](int ring, int corner) { return static_cast<std::uint32_t>(4 * ring + (corner % 4)); };
  for (int k = 0; k < bands; ++k) {
    for (int c = 0; c < 4; ++c) {
      push_tri(m, at(k, c), at(k, c + 1), at(k + 1, c + 1), reflectance, tag);
      push_tri(m, at(k, c), at(k + 1, c + 1), at(k + 1, c), reflectance, tag);
    }
  }
  push_tri(m, at(0, 0), at(0, 2), at(0, 1), reflectance, tag);
  push_tri(m, at(0, 0), at(0, 3), at(0, 2), reflectance, tag);
  push_tri(m, at(bands, 0), at(bands, 1), at(bands, 2), reflectance, tag);
  push_tri(m, at(bands, 0), at(bands, 2), at(bands, 3), reflectance, tag);
  return m;
}

TriangleMesh plane(double x0, double y0, double x1, double y1, double z, double reflectance) {
  TriangleMesh m;
  m.vertices = {Vec3(x0, y0, z), Vec3(x1, y0, z), Vec3(x1, y1, z), Vec3(x0, y1, z)};
  push_tri(m, 0, 1, 2, reflectance, BodyRegion::kNone);
  push_tri(m, 0, 2, 3, reflectance, BodyRegion::kNone);
  return m;
}

TriangleMesh frustum(const Vec3& a, const Vec3& b, double radius_a, double radius_b, int segments,
                     double reflectance, BodyRegion tag) {
  TriangleMesh m;
  const auto [u, v] = basis(b - a);
  const auto ca = push_vertex(m, a);
  const auto cb = push_vertex(m, b);
  const std::uint32_t ring0 = static_cast<std::uint32_t>(m.vertices.size());
  for (int i = 0; i < segments; ++i) {
    const double ang = 2.0 * std::numbers::pi * i / segments;
    const Vec3 dir = std::cos(ang) * u + std::sin(ang) * v;
    m.vertices.push_back(a + radius_a * dir);
    m.vertices.push_back(b + radius_b * dir);
  }
  for (int i = 0; i < segments; ++i) {
    const std::uint32_t a0 = ring0 + 2 * i, b0 = a0 + 1;
    const std::uint32_t a1 = ring0 + 2 * ((i + 1) % segments), b1 = a1 + 1;
    if (radius_a > 0 && radius_b > 0) {
      push_tri(m, a0, a1, b1, reflectance, tag);
      push_tri(m, a0, b1, b0, reflectance, tag);
    } else if (radius_a > 0) {
      push_tri(m, a0, a1, b0, reflectance, tag);
    } else {
      push_tri(m, a0, b1, b0, reflectance, tag);
    }
    if (radius_a > 0) push_tri(m, ca, a1, a0, reflectance, tag);
    if (radius_b > 0) push_tri(m, cb, b0, b1, reflectance, tag);
  }
  // The centre vertex of a zero-radius end stays unreferenced.
  return m;
}

TriangleMesh sphere(const Vec3& center, double radius, int stacks, int slices, double reflectance,
                    BodyRegion tag) {
  TriangleMesh m;
  const auto top = push_vertex(m, center + Vec3(0, 0, radius));
  const auto bottom = push_vertex(m, center - Vec3(0, 0, radius));
  const std::uint32_t first = static_cast<std::uint32_t>(m.vertices.size());
  for (int s = 1; s < stacks; ++s) {
    const double phi = std::numbers::pi * s / stacks;
    for (int k = 0; k < slices; ++k) {
      const double th = 2.0 * std::numbers::pi * k / slices;
      m.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(th), std::sin(phi) * std::sin(th), std::cos(phi)));
    }
  }
  auto at = [&](int s, int k) { return first + static_cast<std::uint32_t>((s - 1) * slices + (k % slices)); };
  for (int k = 0; k < slices; ++k) {
    push_tri(m, top, at(1, k), at(1, k + 1), reflectance, tag);
    push_tri(m, bottom, at(stacks - 1, k + 1), at(stacks - 1, k), reflectance, tag);
  }
  for (int s = 1; s < stacks - 1; ++s) {
    for (int k = 0; k < slices; ++k) {
      push_tri(m, at(s, k), at(s + 1, k), at(s + 1, k + 1), reflectance, tag);
      push_tri(m, at(s, k), at(s + 1, k + 1), at(s, k + 1), reflectance, tag);
    }
  }
  return m;
}

TriangleMesh capsule(const Vec3& a, const Vec3& b, double radius, int segments, double reflectance,
                     BodyRegion tag, int bands) {
  const Vec3 axis = (b - a).normalized();
  const auto [u, v] = basis(axis);
  const int half_rings = 3;
  TriangleMesh m;
  // Rings from the a-pole to the b-pole: hemisphere at a, hemisphere at b.
  std::vector<std::pair<Vec3, double>> rings;  // (centre, radius)
  for (int i = half_rings - 1; i >= 1; --i) {
    const double ang = 0.5 * std::numbers::pi * i / half_rings;
    rings.emplace_back(a - radius * std::sin(ang) * axis, radius * std::cos(ang));
  }
  const int n_bands = std::max(1, bands);
  for (int k = 0; k < n_bands; ++k) rings.emplace_back(a + (b - a) * (static_cast<double>(k) / n_bands), radius);
  rings.emplace_back(b, radius);
  for (int i = 1; i < half_rings; ++i) {
    const double ang = 0.5 * std::numbers::pi * i / half_rings;
    rings.emplace_back(b + radius * std::sin(ang) * axis, radius * std::cos(ang));
  }
  const auto pole_a = push_vertex(m, a - radius * axis);
  const auto pole_b = push_vertex(m, b + radius * axis);
  const std::uint32_t first = static_cast<std::uint32_t>(m.vertices.size());
  for (const auto& [c, r] : rings) {
    for (int k = 0; k < segments; ++k) {
      const double th = 2.0 * std::numbers::pi * k / segments;
      m.vertices.push_back(c + r * (std::cos(th) * u + std::sin(th) * v));
    }
  }
  const int n_rings = static_cast<int>(rings.size());
  auto at = [&](int ring, int k) { return first + static_cast<std::uint32_t>(ring * segments + (k % segments)); };
  for (int k = 0; k < segments; ++k) {
    push_tri(m, pole_a, at(0, k + 1), at(0, k), reflectance, tag);
    push_tri(m, pole_b, at(n_rings - 1, k), at(n_rings - 1, k + 1), reflectance, tag);
  }
  for (int ring = 0; ring + 1 < n_rings; ++ring) {
    for (int k = 0; k < segments; ++k) {
      push_tri(m, at(ring, k), at(ring, k + 1), at(ring + 1, k + 1), reflectance, tag);
      push_tri(m, at(ring, k), at(ring + 1, k + 1), at(ring + 1, k), reflectance, tag);
    }
  }
  return m;
}

}  // namespace advforge::primitives
