#pragma once

// Independent reference implementations used only by the tests. They share
// no code with the library beyond plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "advforge/detector.hpp"
#include "advforge/geometry.hpp"

namespace oracle {

using advforge::Box3D;
using advforge::Vec3;

inline bool inside(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec3 d = p - b.center;
  const double lx = c * d.x() + s * d.y();
  const double ly = -s * d.x() + c * d.y();
  return std::abs(lx) <= 0.5 * b.size.x() && std::abs(ly) <= 0.5 * b.size.y() && std::abs(d.z()) <= 0.5 * b.size.z();
}

// Jittered voxel sampling of the union's axis-aligned bounds: one uniform
// point per voxel, IoU = |both| / |either|.
inline double voxel_iou(const Box3D& a, const Box3D& b, int res, std::mt19937_64& gen) {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const Box3D* box : {&a, &b}) {
    const double r = 0.5 * std::hypot(box->size.x(), box->size.y());
    lo = lo.cwiseMin(box->center - Vec3(r, r, 0.5 * box->size.z()));
    hi = hi.cwiseMax(box->center + Vec3(r, r, 0.5 * box->size.z()));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 step = (hi - lo) / res;
  std::int64_t both = 0, either = 0;
  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      for (int k = 0; k < res; ++k) {
        const Vec3 p = lo + Vec3((i + u(gen)) * step.x(), (j + u(gen)) * step.y(), (k + u(gen)) * step.z());
        const bool ia = inside(a, p), ib = inside(b, p);
        both += ia && ib;
        either += ia || ib;
      }
    }
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

inline std::pair<std::size_t, double> brute_nearest(std::span<const Vec3> pts, const Vec3& q) {
  std::size_t best = 0;
  double d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double e = (pts[i] - q).squaredNorm();
    if (e < d2) {
      d2 = e;
      best = i;
    }
  }
  return {best, std::sqrt(d2)};
}

inline double brute_chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a) ab += brute_nearest(b, p).second;
  for (const auto& p : b) ba += brute_nearest(a, p).second;
  return 0.5 * (ab / static_cast<double>(a.size())) + 0.5 * (ba / static_cast<double>(b.size()));
}

// Moller-Trumbore without any culling, written out longhand.
inline std::optional<double> ray_triangle(const Vec3& o, const Vec3& d, const Vec3& v0, const Vec3& v1, const Vec3& v2) {
  const Vec3 e1 = v1 - v0, e2 = v2 - v0;
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-9) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = o - v0;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  return e2.dot(q) * inv;
}

// ---------------------------------------------------------------------------
// BEV features by direct per-cell accumulation
// ---------------------------------------------------------------------------

struct CellFeatures {
  double count = 0, height = 0, intensity = 0, offset_x = 0, offset_y = 0;
};

inline std::map<std::pair<int, int>, CellFeatures> features(const advforge::PointCloud& cloud,
                                                             const advforge::BevSpec& spec) {
  struct Acc {
    std::vector<const advforge::CloudPoint*> pts;
  };
  std::map<std::pair<int, int>, Acc> acc;
  for (const auto& p : cloud.points) {
    const Vec3& x = p.position;
    if (x.z() < spec.z_min || x.z() > spec.z_max) continue;
    if (x.x() < spec.x_min || x.x() >= spec.x_max || x.y() < spec.y_min || x.y() >= spec.y_max) continue;
    const int ix = static_cast<int>(std::floor((x.x() - spec.x_min) / spec.cell));
    const int iy = static_cast<int>(std::floor((x.y() - spec.y_min) / spec.cell));
    acc[{ix, iy}].pts.push_back(&p);
  }
  std::map<std::pair<int, int>, CellFeatures> out;
  for (const auto& [key, a] : acc) {
    const double cx = spec.x_min + (key.first + 0.5) * spec.cell;
    const double cy = spec.y_min + (key.second + 0.5) * spec.cell;
    CellFeatures f;
    double zmax = -1e300;
    for (auto* p : a.pts) zmax = std::max(zmax, p->position.z());
    double num = 0, den = 0, wi = 0, wx = 0, wy = 0;
    for (auto* p : a.pts) {
      f.count += p->weight;
      const double e = p->weight * std::exp((p->position.z() - zmax) / spec.height_temperature);
      num += e * p->position.z();
      den += e;
      wi += p->weight * p->intensity;
      wx += p->weight * (p->position.x() - cx);
      wy += p->weight * (p->position.y() - cy);
    }
    f.height = num / den;
    f.intensity = wi / (f.count + 1e-6);
    f.offset_x = wx / (f.count + 1e-6);
    f.offset_y = wy / (f.count + 1e-6);
    out[key] = f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense reference network over a zero-padded grid
// ---------------------------------------------------------------------------

struct DenseOutput {
  int nx = 0, ny = 0;
  std::vector<std::array<double, 8>> out;  // ix * ny + iy
};

// Evaluates the detector on the whole grid. Empty cells (including those
// beyond the grid edge) have all-zero input, as on an unbounded plane.
inline DenseOutput dense_forward(const advforge::PointCloud& cloud, const advforge::DetectorParams& params,
                                 const advforge::BevSpec& spec) {
  constexpr int kIn = 5, kC1 = 8, kC2 = 16, kOut = 8, kPad = 2;
  const int nx = spec.nx(), ny = spec.ny();
  const int W = nx + 2 * kPad, H = ny + 2 * kPad;
  auto at = [&](int ix, int iy) { return static_cast<std::size_t>((ix + kPad) * H + (iy + kPad)); };

  std::vector<std::array<double, kIn>> x(static_cast<std::size_t>(W * H), std::array<double, kIn>{});
  for (const auto& [key, f] : features(cloud, spec)) {
    const double g = 1.0 - std::exp(-3.0 * f.count);
    const double half = spec.cell / 2.0;
    x[at(key.first, key.second)] = {std::log(1.0 + f.count), f.height * g, f.intensity * g, f.offset_x / half * g,
                                    f.offset_y / half * g};
  }
  const double* w1 = params.values.data();
  const double* b1 = w1 + kC1 * kIn * 9;
  const double* w2 = b1 + kC1;
  const double* b2 = w2 + kC2 * kC1 * 9;
  const double* wh = b2 + kC2;
  const double* bh = wh + kOut * kC2;

  std::vector<std::array<double, kC1>> a1(static_cast<std::size_t>(W * H), std::array<double, kC1>{});
  for (int ix = -1; ix <= nx; ++ix) {
    for (int iy = -1; iy <= ny; ++iy) {
      for (int o = 0; o < kC1; ++o) {
        double z = b1[o];
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int i = 0; i < kIn; ++i) z += w1[(o * kIn + i) * 9 + (dx + 1) * 3 + (dy + 1)] * x[at(ix + dx, iy + dy)][i];
        a1[at(ix, iy)][o] = std::max(0.0, z);
      }
    }
  }
  DenseOutput res;
  res.nx = nx;
  res.ny = ny;
  res.out.resize(static_cast<std::size_t>(nx * ny));
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      std::array<double, kC2> a2{};
      for (int o = 0; o < kC2; ++o) {
        double z = b2[o];
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy)
            for (int i = 0; i < kC1; ++i) z += w2[(o * kC1 + i) * 9 + (dx + 1) * 3 + (dy + 1)] * a1[at(ix + dx, iy + dy)][i];
        a2[o] = std::max(0.0, z);
      }
      auto& out = res.out[static_cast<std::size_t>(ix * ny + iy)];
      for (int o = 0; o < kOut; ++o) {
        double z = bh[o];
        for (int i = 0; i < kC2; ++i) z += wh[o * kC2 + i] * a2[i];
        out[o] = z;
      }
    }
  }
  return res;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-9) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

}  // namespace oracle
