#include "advforge/physical_plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "advforge/rng.hpp"
#include "json.hpp"

namespace advforge {

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw Error(ErrorCode::kEmptyMesh, "cannot sample an empty mesh");
  std::vector<double> cdf(mesh.triangle_count());
  double total = 0.0;
  for (std::size_t t = 0; t < cdf.size(); ++t) cdf[t] = (total += mesh.triangle_area(t));
  for (auto& c : cdf) c /= total;
  Rng rng(seed);
  std::vector<Vec3> out(n);
  for (auto& p : out) {
    const double r = rng.uniform();
    const auto t = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin()), cdf.size() - 1);
    const double s = std::sqrt(rng.uniform());
    const double u = rng.uniform();
    const Vec3 a = mesh.corner(t, 0), b = mesh.corner(t, 1), c = mesh.corner(t, 2);
    p = a + s * (1.0 - u) * (b - a) + s * u * (c - a);
  }
  return out;
}

namespace {

struct Coarse {
  std::size_t object = 0;
  Pose3D pose;
};

std::vector<Vec3> posed(std::span<const Vec3> local, const Pose3D& pose) {
  std::vector<Vec3> out(local.size());
  for (std::size_t i = 0; i < local.size(); ++i) out[i] = pose.apply(local[i]);
  return out;
}

// Chamfer between a fixed target set and (already placed points + one
// candidate), without re-indexing the placed points.
class ResidualModel {
 public:
  explicit ResidualModel(std::vector<Vec3> target)
      : target_(std::move(target)), index_(target_),
        nearest_placed_(target_.size(), std::numeric_limits<double>::infinity()) {}

  std::size_t size() const noexcept { return target_.size(); }

  double with(std::span<const Vec3> candidate) const {
    const NearestNeighborIndex cand(std::vector<Vec3>(candidate.begin(), candidate.end()));
    double forward = 0.0;
    for (std::size_t i = 0; i < target_.size(); ++i) {
      forward += std::min(nearest_placed_[i], cand.nearest(target_[i]).second);
    }
    const double backward = placed_sum_ + nearest_distance_sum(candidate, index_);
    return 0.5 * forward / static_cast<double>(target_.size()) +
           0.5 * backward / static_cast<double>(placed_count_ + candidate.size());
  }

  void commit(std::span<const Vec3> points) {
    const NearestNeighborIndex grid(std::vector<Vec3>(points.begin(), points.end()));
    for (std::size_t i = 0; i < target_.size(); ++i) {
      nearest_placed_[i] = std::min(nearest_placed_[i], grid.nearest(target_[i]).second);
    }
    placed_sum_ += nearest_distance_sum(points, index_);
    placed_count_ += points.size();
  }

 private:
  std::vector<Vec3> target_;
  NearestNeighborIndex index_;
  std::vector<double> nearest_placed_;
  double placed_sum_ = 0.0;
  std::size_t placed_count_ = 0;
};

Pose3D clamp_scale(Pose3D p) {
  p.scale = std::clamp(p.scale, kMinPlanScale, kMaxPlanScale);
  return p;
}

// Pattern search over (x, y, z, yaw, scale) with fixed step sizes.
Pose3D refine(const ResidualModel& model, std::span<const Vec3> local, Pose3D pose, const PlanOptions& o,
              double& residual) {
  const double yaw_step = o.yaw_step_deg * std::numbers::pi / 180.0;
  auto moved = [&](const Pose3D& p, int coord, double dir) {
    Pose3D q = p;
    if (coord < 3) q.translation[coord] += dir * o.translation_step;
    if (coord == 3) q.yaw = normalize_yaw(q.yaw + dir * yaw_step);
    if (coord == 4) q.scale *= 1.0 + dir * o.scale_step;
    return clamp_scale(q);
  };
  residual = model.with(posed(local, pose));
  for (int sweep = 0; sweep < 1000; ++sweep) {
    const double before = residual;
    for (int coord = 0; coord < 5; ++coord) {
      for (double dir : {1.0, -1.0}) {
        for (;;) {
          const Pose3D q = moved(pose, coord, dir);
          const double r = model.with(posed(local, q));
          if (!(r < residual)) break;
          pose = q;
          residual = r;
        }
      }
    }
    if (before - residual < o.refine_tolerance) break;
  }
  return pose;
}

}  // namespace

AssemblyPlan plan_assembly(const TriangleMesh& target, const ObjectPool& pool, int budget, const PlanOptions& o) {
  if (target.empty()) throw Error(ErrorCode::kEmptyTarget, "target mesh has no triangles");
  if (budget < 1) throw Error(ErrorCode::kInvalidConfig, "budget must be >= 1");
  if (pool.entries.empty()) throw Error(ErrorCode::kInvalidConfig, "object pool is empty");
  if (o.surface_samples == 0 || o.coarse_samples == 0 || o.yaw_steps < 1 || o.coarse_scales.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "invalid plan options");
  }
  const std::size_t n_coarse = std::min(o.coarse_samples, o.surface_samples);

  const std::vector<Vec3> target_points = sample_surface(target, o.surface_samples, o.seed);
  std::vector<std::vector<Vec3>> local(pool.entries.size());
  for (std::size_t k = 0; k < local.size(); ++k) {
    local[k] = sample_surface(pool.entries[k].mesh, o.surface_samples, o.seed);
  }

  // Coarse grid: pool entry x yaw x AABB centre/octant centres x scale.
  const Box3D box = mesh_aabb(target);
  std::vector<Vec3> snaps{box.center};
  for (int i = 0; i < 8; ++i) {
    const Vec3 sign((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
    snaps.push_back(box.center + 0.25 * sign.cwiseProduct(box.size));
  }
  std::vector<Coarse> grid;
  for (std::size_t k = 0; k < pool.entries.size(); ++k) {
    for (int y = 0; y < o.yaw_steps; ++y) {
      for (const auto& s : snaps) {
        for (double sc : o.coarse_scales) {
          const double yaw = normalize_yaw(2.0 * std::numbers::pi * y / o.yaw_steps);
          grid.push_back({k, clamp_scale(Pose3D{s, yaw, sc})});
        }
      }
    }
  }

  ResidualModel fine(target_points);
  ResidualModel coarse(std::vector<Vec3>(target_points.begin(), target_points.begin() + static_cast<std::ptrdiff_t>(n_coarse)));
  AssemblyPlan plan;
  double current = std::numeric_limits<double>::infinity();
  for (int round = 0; round < budget; ++round) {
    std::vector<double> scores(grid.size());
    parallel_for(grid.size(), [&](std::size_t g) {
      const auto& pts = local[grid[g].object];
      scores[g] = coarse.with(posed(std::span<const Vec3>(pts.data(), n_coarse), grid[g].pose));
    });
    // First minimum in grid order breaks ties.
    const std::size_t best = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
    // Descend on the sample prefix first, then polish on the full set.
    const auto& obj = local[grid[best].object];
    double residual = 0.0;
    Pose3D pose = refine(coarse, std::span<const Vec3>(obj.data(), n_coarse), grid[best].pose, o, residual);
    pose = refine(fine, obj, pose, o, residual);
    if (!(current - residual >= o.min_improvement) && round > 0) break;
    const auto pts = posed(local[grid[best].object], pose);
    fine.commit(pts);
    coarse.commit(std::span<const Vec3>(pts.data(), n_coarse));
    plan.placements.push_back({pool.entries[grid[best].object].name, pose});
    plan.residual_history.push_back(residual);
    plan.residual = current = residual;
  }
  return plan;
}

TriangleMesh assemble(const AssemblyPlan& plan, const ObjectPool& pool) {
  TriangleMesh out;
  for (const auto& p : plan.placements) {
    TriangleMesh m = transform_mesh(pool.at(p.object).mesh, p.pose);
    m.tags.clear();
    out.append(m);
  }
  return out;
}

TrialScore score_with_objects(const TriangleMesh& objects, const TriangleMesh& ped, const ScenarioConfig& scenario,
                              const DetectorParams& params) {
  TriangleMesh m = ped;
  if (!objects.empty()) {
    TriangleMesh o = objects;
    o.tags.assign(o.triangle_count(), BodyRegion::kNone);
    m.append(o);
  }
  const std::vector<TriangleMesh> targets{std::move(m)};
  const Pose3D pose = place_target(ped, scenario);
  const ComposedScene scene = compose(scenario.env, targets, pose);
  const ScanResult s = scan(*scene.bvh, attack_lidar(scenario, ped), ScanMotion{scenario.velocity, 0});
  return score_trial(detect(s.cloud, params), target_box(std::span<const TriangleMesh>(&ped, 1), pose));
}

TrialScore validate_plan(const AssemblyPlan& plan, const ObjectPool& pool, const TriangleMesh& ped,
                         const ScenarioConfig& scenario, const DetectorParams& params) {
  return score_with_objects(assemble(plan, pool), ped, scenario, params);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void write_plan(const AssemblyPlan& plan, const std::filesystem::path& path) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& p : plan.placements) {
    const Vec3& t = p.pose.translation;
    objects.push_back({{"name", p.object},
                       {"position", {t.x(), t.y(), t.z()}},
                       {"yaw_deg", p.pose.yaw * 180.0 / std::numbers::pi},
                       {"scale", p.pose.scale}});
  }
  nlohmann::json j = {{"objects", objects},
                      {"residual", plan.residual},
                      {"residual_history", plan.residual_history},
                      {"prompt", plan.prompt}};
  if (plan.triplet) {
    j["triplet"] = {plan.triplet->verb, plan.triplet->object, plan.triplet->pose};
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

AssemblyPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    AssemblyPlan plan;
    for (const auto& o : j.at("objects")) {
      const auto pos = o.at("position").get<std::vector<double>>();
      if (pos.size() != 3) throw Error(ErrorCode::kInvalidConfig, "position needs three values");
      const double scale = o.at("scale").get<double>();
      if (!(scale >= kMinPlanScale && scale <= kMaxPlanScale)) {
        throw Error(ErrorCode::kInvalidConfig, "plan scale outside [0.5, 2]");
      }
      plan.placements.push_back(
          {o.at("name").get<std::string>(),
           Pose3D::make(Vec3(pos[0], pos[1], pos[2]), o.at("yaw_deg").get<double>() * std::numbers::pi / 180.0, scale)});
    }
    plan.residual = j.at("residual").get<double>();
    plan.residual_history = j.value("residual_history", std::vector<double>{});
    plan.prompt = j.value("prompt", std::string{});
    if (j.contains("triplet")) {
      const auto t = j["triplet"].get<std::vector<std::size_t>>();
      if (t.size() != 3) throw Error(ErrorCode::kInvalidConfig, "triplet needs three indices");
      plan.triplet = VopTriplet{t[0], t[1], t[2]};
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace advforge
