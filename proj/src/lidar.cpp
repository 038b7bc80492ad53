#include "advforge/lidar.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "advforge/rng.hpp"

namespace advforge {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::uint32_t kLeafSize = 4;
constexpr int kSahBins = 12;

double wrap_deg(double a) {
  a = std::fmod(a + 180.0, 360.0);
  if (a < 0) a += 360.0;
  return a - 180.0;
}

bool earlier(const Hit& a, const Hit& b) {
  return a.t < b.t || (a.t == b.t && a.source < b.source);
}

}  // namespace

// ---------------------------------------------------------------------------
// LidarConfig
// ---------------------------------------------------------------------------

void LidarConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
  if (beams < 1) fail("lidar.beams must be >= 1");
  if (!(azimuth_step_deg > 0.0)) fail("lidar.azimuth_step must be > 0");
  if (!(max_range > 0.0)) fail("lidar.max_range must be > 0");
  if (!(elevation_min_deg < elevation_max_deg)) fail("lidar.elevation_fov requires min < max");
  if (!(noise_sigma >= 0.0)) fail("lidar.noise_sigma must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) fail("lidar.dropout_prob must be in [0,1)");
  if (!(azimuth_min_deg < azimuth_max_deg)) fail("lidar.azimuth_fov requires min < max");
}

int LidarConfig::columns() const {
  return static_cast<int>(std::ceil(360.0 / azimuth_step_deg - 1e-9));
}

double LidarConfig::elevation_deg(int beam) const {
  if (beams == 1) return 0.5 * (elevation_min_deg + elevation_max_deg);
  return elevation_min_deg + beam * (elevation_max_deg - elevation_min_deg) / (beams - 1);
}

bool LidarConfig::column_enabled(int column) const {
  const double az = azimuth_deg(column);
  return az >= azimuth_min_deg && az < azimuth_max_deg;
}

Vec3 LidarConfig::direction(int column, int beam) const {
  const double az = azimuth_deg(column) * kDeg;
  const double el = elevation_deg(beam) * kDeg;
  return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

// ---------------------------------------------------------------------------
// Ray-triangle
// ---------------------------------------------------------------------------

std::optional<double> intersect_triangle(const Vec3& v0, const Vec3& v1, const Vec3& v2, const Vec3& origin,
                                         const Vec3& direction, double max_t) {
  const Vec3 e1 = v1 - v0;
  const Vec3 e2 = v2 - v0;
  const Vec3 p = direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < kParallelEpsilon) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = origin - v0;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= kMinHitDistance || t > max_t) return std::nullopt;
  return t;
}

bool Bvh::intersect(const Tri& tri, const Vec3& o, const Vec3& d, double max_t, double& t) {
  // Same arithmetic as intersect_triangle, on precomputed edges.
  const Vec3 p = d.cross(tri.e2);
  const double det = tri.e1.dot(p);
  if (std::abs(det) < kParallelEpsilon) return false;
  const double inv = 1.0 / det;
  const Vec3 s = o - tri.v0;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 q = s.cross(tri.e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return false;
  t = tri.e2.dot(q) * inv;
  return t > kMinHitDistance && t <= max_t;
}

Hit Bvh::make_hit(const Tri& tri, const Vec3& o, const Vec3& d, double t) const {
  Hit h;
  h.t = t;
  h.point = o + t * d;
  h.source = tri.source;
  h.incidence_cos = std::abs(tri.normal.dot(d));
  return h;
}

// ---------------------------------------------------------------------------
// BVH construction (binned SAH)
// ---------------------------------------------------------------------------

Bvh::Bvh(std::span<const TriangleMesh> meshes) {
  mesh_count_ = meshes.size();
  mesh_reflectance_.reserve(meshes.size());
  for (std::uint32_t m = 0; m < meshes.size(); ++m) {
    const auto& mesh = meshes[m];
    mesh_reflectance_.push_back(mesh.reflectance);
    for (std::uint32_t t = 0; t < mesh.triangles.size(); ++t) {
      Tri tri;
      tri.v0 = mesh.corner(t, 0);
      tri.e1 = mesh.corner(t, 1) - tri.v0;
      tri.e2 = mesh.corner(t, 2) - tri.v0;
      tri.normal = tri.e1.cross(tri.e2).normalized();
      tri.source = {m, t};
      tri.reflectance = mesh.reflectance[t];
      tris_.push_back(tri);
    }
  }
  if (tris_.empty()) throw Error(ErrorCode::kEmptyScene, "scene has no triangles");
  std::vector<Vec3> centroids;
  centroids.reserve(tris_.size());
  for (const auto& t : tris_) centroids.push_back(t.v0 + (t.e1 + t.e2) / 3.0);
  nodes_.reserve(2 * tris_.size() / kLeafSize + 1);
  nodes_.emplace_back();
  build(0, 0, static_cast<std::uint32_t>(tris_.size()), centroids);
}

void Bvh::build(std::uint32_t node, std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  Vec3 clo = lo, chi = hi;
  for (std::uint32_t i = first; i < first + count; ++i) {
    const auto& t = tris_[i];
    for (const Vec3& v : {t.v0, Vec3(t.v0 + t.e1), Vec3(t.v0 + t.e2)}) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    clo = clo.cwiseMin(centroids[i]);
    chi = chi.cwiseMax(centroids[i]);
  }
  nodes_[node].lo = lo;
  nodes_[node].hi = hi;
  if (count <= kLeafSize) {
    nodes_[node].first = first;
    nodes_[node].count = count;
    return;
  }

  auto area = [](const Vec3& a, const Vec3& b) {
    const Vec3 d = (b - a).cwiseMax(Vec3::Zero());
    return d.x() * d.y() + d.y() * d.z() + d.z() * d.x();
  };

  int best_axis = -1;
  int best_split = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double extent = chi[axis] - clo[axis];
    if (extent <= 0.0) continue;
    struct Bin {
      Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
      Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
      std::uint32_t n = 0;
    };
    Bin bins[kSahBins];
    for (std::uint32_t i = first; i < first + count; ++i) {
      int b = static_cast<int>(kSahBins * (centroids[i][axis] - clo[axis]) / extent);
      b = std::clamp(b, 0, kSahBins - 1);
      const auto& t = tris_[i];
      for (const Vec3& v : {t.v0, Vec3(t.v0 + t.e1), Vec3(t.v0 + t.e2)}) {
        bins[b].lo = bins[b].lo.cwiseMin(v);
        bins[b].hi = bins[b].hi.cwiseMax(v);
      }
      ++bins[b].n;
    }
    for (int split = 1; split < kSahBins; ++split) {
      Bin l, r;
      for (int b = 0; b < split; ++b) {
        l.lo = l.lo.cwiseMin(bins[b].lo);
        l.hi = l.hi.cwiseMax(bins[b].hi);
        l.n += bins[b].n;
      }
      for (int b = split; b < kSahBins; ++b) {
        r.lo = r.lo.cwiseMin(bins[b].lo);
        r.hi = r.hi.cwiseMax(bins[b].hi);
        r.n += bins[b].n;
      }
      if (l.n == 0 || r.n == 0) continue;
      const double cost = l.n * area(l.lo, l.hi) + r.n * area(r.lo, r.hi);
      if (cost < best_cost) {
        best_cost = cost;
        best_axis = axis;
        best_split = split;
      }
    }
  }

  std::uint32_t mid = first + count / 2;
  if (best_axis >= 0) {
    const double extent = chi[best_axis] - clo[best_axis];
    auto goes_left = [&](std::uint32_t i) {
      int b = static_cast<int>(kSahBins * (centroids[i][best_axis] - clo[best_axis]) / extent);
      return std::clamp(b, 0, kSahBins - 1) < best_split;
    };
    std::uint32_t i = first, j = first + count;
    while (i < j) {
      if (goes_left(i)) {
        ++i;
      } else {
        --j;
        std::swap(tris_[i], tris_[j]);
        std::swap(centroids[i], centroids[j]);
      }
    }
    mid = i;
  }
  if (mid == first || mid == first + count) {
    // All centroids coincide: split by index.
    mid = first + count / 2;
  }

  const auto left = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  nodes_.emplace_back();
  nodes_[node].first = left;
  nodes_[node].count = 0;
  build(left, first, mid - first, centroids);
  build(left + 1, mid, first + count - mid, centroids);
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

namespace {

void check_direction(const Vec3& d) {
  if (!(std::abs(d.norm() - 1.0) <= 1e-6)) {
    throw Error(ErrorCode::kUnnormalizedDirection, "ray direction must be unit length");
  }
}

}  // namespace

std::optional<Hit> Bvh::ray_cast(const Vec3& origin, const Vec3& direction, double max_range) const {
  check_direction(direction);
  Vec3 inv;
  for (int a = 0; a < 3; ++a) {
    const double d = direction[a];
    inv[a] = 1.0 / (d == 0.0 ? std::copysign(1e-300, d) : d);
  }
  auto box_entry = [&](const Node& n) {
    double t0 = 0.0, t1 = max_range;
    for (int a = 0; a < 3; ++a) {
      double n0 = (n.lo[a] - origin[a]) * inv[a];
      double n1 = (n.hi[a] - origin[a]) * inv[a];
      if (n0 > n1) std::swap(n0, n1);
      t0 = std::max(t0, n0);
      t1 = std::min(t1, n1);
    }
    // Small slack keeps boundary hits from being culled by rounding.
    const double slack = 1e-9 * (1.0 + t1);
    return t0 <= t1 + slack ? t0 - slack : std::numeric_limits<double>::infinity();
  };

  std::optional<Hit> best;
  double best_t = max_range;
  std::uint32_t stack[256];
  int sp = 0;
  if (box_entry(nodes_[0]) == std::numeric_limits<double>::infinity()) return std::nullopt;
  stack[sp++] = 0;
  while (sp > 0) {
    const Node& n = nodes_[stack[--sp]];
    if (n.count > 0) {
      for (std::uint32_t i = n.first; i < n.first + n.count; ++i) {
        double t;
        if (!intersect(tris_[i], origin, direction, best_t, t)) continue;
        Hit h = make_hit(tris_[i], origin, direction, t);
        if (!best || earlier(h, *best)) {
          best = h;
          best_t = t;
        }
      }
      continue;
    }
    const double tl = box_entry(nodes_[n.first]);
    const double tr = box_entry(nodes_[n.first + 1]);
    // Push the farther child first so the nearer one is visited next.
    const bool left_first = tl <= tr;
    const std::uint32_t near_id = left_first ? n.first : n.first + 1;
    const std::uint32_t far_id = left_first ? n.first + 1 : n.first;
    const double t_near = left_first ? tl : tr;
    const double t_far = left_first ? tr : tl;
    if (t_far <= best_t) stack[sp++] = far_id;
    if (t_near <= best_t) stack[sp++] = near_id;
  }
  return best;
}

std::optional<Hit> Bvh::ray_cast_exhaustive(const Vec3& origin, const Vec3& direction, double max_range) const {
  check_direction(direction);
  std::optional<Hit> best;
  for (const auto& tri : tris_) {
    double t;
    if (!intersect(tri, origin, direction, max_range, t)) continue;
    Hit h = make_hit(tri, origin, direction, t);
    if (!best || earlier(h, *best)) best = h;
  }
  return best;
}

double Bvh::reflectance(const HitSource& src) const { return mesh_reflectance_.at(src.mesh).at(src.triangle); }

double intensity_model(const Hit& hit, double reflectance) {
  const double r = kIntensityReferenceRange / hit.t;
  return std::clamp(reflectance * std::max(0.0, hit.incidence_cos) * r * r, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Scanning
// ---------------------------------------------------------------------------

RayWindow RayWindow::around(const Box3D& box, const LidarConfig& cfg, double extra_margin) {
  RayWindow w;
  const double radius = 0.5 * box.size.norm() + extra_margin + 1e-3;
  const Vec3 v = box.center - cfg.origin;
  const double d = v.norm();
  const double d_xy = std::hypot(v.x(), v.y());
  if (d <= radius + 1e-6) return w;  // sensor inside the bounding sphere
  w.everything = false;
  const double pad = 0.01;  // degrees
  const double alpha = std::asin(radius / d) / kDeg + pad;
  w.center_azimuth_deg = std::atan2(v.y(), v.x()) / kDeg;
  w.half_azimuth_deg = d_xy > radius ? std::asin(radius / d_xy) / kDeg + pad : 180.0;
  const double el = std::atan2(v.z(), d_xy) / kDeg;
  w.min_elevation_deg = el - alpha;
  w.max_elevation_deg = el + alpha;
  return w;
}

bool RayWindow::contains(const LidarConfig& cfg, int column, int beam) const {
  if (everything) return true;
  const double el = cfg.elevation_deg(beam);
  if (el < min_elevation_deg || el > max_elevation_deg) return false;
  return std::abs(wrap_deg(cfg.azimuth_deg(column) - center_azimuth_deg)) <= half_azimuth_deg;
}

double ScanMotion::column_time(const LidarConfig& cfg, int column) const {
  // Timestamp convention: mid-spin, so azimuth 0 is measured at t = 0.
  return cfg.azimuth_deg(column) / 360.0 * kFramePeriod;
}

double ScanMotion::column_offset(const LidarConfig& cfg, int column) const {
  return (frame * kFramePeriod + column_time(cfg, column)) * velocity;
}

std::uint64_t ray_seed(std::uint64_t seed, int frame, int column, int beam) {
  return derive_seed({seed, static_cast<std::uint64_t>(frame), static_cast<std::uint64_t>(column),
                      static_cast<std::uint64_t>(beam)});
}

ScanResult scan(const Bvh& bvh, const LidarConfig& cfg, const ScanMotion& motion, const RayWindow* window) {
  cfg.validate();
  const int n_cols = cfg.columns();
  std::vector<int> cols;
  for (int c = 0; c < n_cols; ++c) {
    if (cfg.column_enabled(c)) cols.push_back(c);
  }
  std::vector<ScanResult> per_col(cols.size());
  parallel_for(cols.size(), [&](std::size_t k) {
    const int c = cols[k];
    ScanResult& out = per_col[k];
    const Vec3 origin = cfg.origin + Vec3(motion.column_offset(cfg, c), 0.0, 0.0);
    for (int b = 0; b < cfg.beams; ++b) {
      if (window && !window->contains(cfg, c, b)) continue;
      const Vec3 dir = cfg.direction(c, b);
      const auto hit = bvh.ray_cast(origin, dir, cfg.max_range);
      if (!hit) continue;
      Rng rng(ray_seed(cfg.seed, motion.frame, c, b));
      const double drop_u = rng.uniform();
      const double noise = rng.normal();
      if (drop_u < cfg.dropout_prob) continue;
      const double range = std::clamp(hit->t + cfg.noise_sigma * noise, kMinHitDistance, cfg.max_range);
      CloudPoint p;
      p.position = cfg.origin + range * dir;
      p.intensity = intensity_model(*hit, bvh.reflectance(hit->source));
      p.weight = 1.0;
      out.cloud.points.push_back(p);
      out.sources.push_back(hit->source);
      out.ray_ids.push_back(static_cast<std::uint32_t>(c * cfg.beams + b));
    }
  });
  ScanResult result;
  std::size_t total = 0;
  for (const auto& r : per_col) total += r.cloud.size();
  result.cloud.points.reserve(total);
  result.sources.reserve(total);
  result.ray_ids.reserve(total);
  for (auto& r : per_col) {
    result.cloud.points.insert(result.cloud.points.end(), r.cloud.points.begin(), r.cloud.points.end());
    result.sources.insert(result.sources.end(), r.sources.begin(), r.sources.end());
    result.ray_ids.insert(result.ray_ids.end(), r.ray_ids.begin(), r.ray_ids.end());
  }
  return result;
}

ScanResult splice(const ScanResult& background, const ScanResult& patch, const LidarConfig& cfg,
                  const RayWindow& window) {
  ScanResult out;
  out.cloud.points.reserve(background.cloud.size() + patch.cloud.size());
  auto in_window = [&](std::uint32_t id) {
    return window.contains(cfg, static_cast<int>(id / cfg.beams), static_cast<int>(id % cfg.beams));
  };
  auto push = [&](const ScanResult& src, std::size_t i) {
    out.cloud.points.push_back(src.cloud.points[i]);
    out.sources.push_back(src.sources[i]);
    out.ray_ids.push_back(src.ray_ids[i]);
  };
  std::size_t i = 0, j = 0;
  while (i < background.ray_ids.size() || j < patch.ray_ids.size()) {
    if (i < background.ray_ids.size() && in_window(background.ray_ids[i])) {
      ++i;
      continue;
    }
    if (j >= patch.ray_ids.size() || (i < background.ray_ids.size() && background.ray_ids[i] < patch.ray_ids[j])) {
      push(background, i++);
    } else {
      push(patch, j++);
    }
  }
  return out;
}

std::vector<ScanFrame> scan_sequence(std::span<const Bvh* const> bvh_per_frame, const LidarConfig& cfg,
                                     double ego_velocity, int n_frames) {
  if (n_frames < 1) throw Error(ErrorCode::kInvalidConfig, "n_frames must be >= 1");
  if (bvh_per_frame.empty()) throw Error(ErrorCode::kEmptyScene, "no scene for scan sequence");
  if (bvh_per_frame.size() != 1 && static_cast<int>(bvh_per_frame.size()) != n_frames) {
    throw Error(ErrorCode::kInvalidConfig, "need one BVH or one per frame");
  }
  std::vector<ScanFrame> frames;
  frames.reserve(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    const Bvh& bvh = *bvh_per_frame[bvh_per_frame.size() == 1 ? 0 : k];
    ScanFrame f;
    f.frame = k;
    f.origin = cfg.origin + Vec3(k * kFramePeriod * ego_velocity, 0.0, 0.0);
    f.scan = scan(bvh, cfg, ScanMotion{ego_velocity, k});
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// KITTI .bin
// ---------------------------------------------------------------------------

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

}  // namespace

void write_kitti_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& p : cloud.points) {
    const float rec[4] = {static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
                          static_cast<float>(p.position.z()), static_cast<float>(p.intensity)};
    for (float f : rec) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  PointCloud cloud;
  std::uint32_t bits[4];
  while (in.read(reinterpret_cast<char*>(bits), sizeof bits)) {
    float f[4];
    for (int i = 0; i < 4; ++i) f[i] = std::bit_cast<float>(to_le(bits[i]));
    CloudPoint p;
    p.position = Vec3(f[0], f[1], f[2]);
    p.intensity = f[3];
    cloud.points.push_back(p);
  }
  if (in.gcount() != 0) {
    throw Error(ErrorCode::kIo, path.string() + ": size is not a multiple of 16 bytes");
  }
  return cloud;
}

}  // namespace advforge
