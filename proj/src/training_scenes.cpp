#include "advforge/training_scenes.hpp"

#include <numbers>

#include "advforge/error.hpp"
#include "advforge/rng.hpp"

namespace advforge {

StandardSceneSampler::StandardSceneSampler(SamplerConfig cfg, ObjectPool pool)
    : cfg_(std::move(cfg)), pool_(std::move(pool)), pedestrian_(build_pedestrian_template()) {
  if (cfg_.environments.empty()) throw Error(ErrorCode::kInvalidConfig, "sampler needs at least one environment");
  if (pool_.entries.empty()) throw Error(ErrorCode::kInvalidConfig, "sampler needs a non-empty object pool");
  cfg_.lidar.validate();
}

TrainingScene StandardSceneSampler::sample(std::uint64_t index) const {
  const std::uint64_t s = derive_seed({cfg_.seed, 0x747261696eULL, index});
  Rng rng(s);
  const double u = rng.uniform();
  const Kind kind = u < cfg_.positive_fraction                           ? Kind::kPedestrian
                    : u < cfg_.positive_fraction + cfg_.object_fraction ? Kind::kObject
                                                                        : Kind::kEmpty;
  return make(s, kind, cfg_.range, static_cast<std::size_t>(index % cfg_.environments.size()));
}

TrainingScene StandardSceneSampler::held_out(std::uint64_t index) const {
  const std::uint64_t s = derive_seed({cfg_.seed, 0x68656c64ULL, index});
  PlacementRange r = cfg_.range;
  r.max_distance = std::min(r.max_distance, cfg_.held_out_max_distance);
  return make(s, Kind::kPedestrian, r, static_cast<std::size_t>(index % cfg_.environments.size()));
}

TrainingScene StandardSceneSampler::make(std::uint64_t scene_seed, Kind kind, const PlacementRange& range,
                                         std::size_t env_index) const {
  const Environment env = make_environment(cfg_.environments[env_index], derive_seed({scene_seed, 1}));
  const Placement place = sample_placement(env, range, cfg_.lidar.origin, derive_seed({scene_seed, 2}));
  ScenarioConfig sc;
  sc.env = env;
  sc.distance = place.distance;
  sc.angle_deg = place.angle_deg;
  sc.lidar = cfg_.lidar;
  sc.lidar.seed = derive_seed({scene_seed, 3});

  TrainingScene out;
  std::vector<TriangleMesh> targets;
  Pose3D pose = place_target(pedestrian_, sc);
  if (kind == Kind::kPedestrian) {
    targets.push_back(pedestrian_);
  } else if (kind == Kind::kObject) {
    Rng rng(derive_seed({scene_seed, 4}));
    const auto& entry = pool_.entries[rng.below(pool_.entries.size())];
    TriangleMesh mesh = entry.mesh;
    mesh.tags.clear();
    const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
    pose = place_target(mesh, sc);
    pose = Pose3D::make(pose.translation, yaw, entry.default_scale);
    pose.translation.z() = 0.5 * mesh_aabb(mesh).size.z() * entry.default_scale;
    targets.push_back(std::move(mesh));
  }
  if (targets.empty()) {
    Box3D around;
    around.center = Vec3(pose.translation.x(), pose.translation.y(), 0.9);
    around.size = Vec3(1.0, 1.0, 1.8);
    const Bvh bvh(env.static_meshes);
    out.cloud = scan(bvh, sector_config(sc.lidar, around, cfg_.sector_margin_deg)).cloud;
    return out;
  }
  const ComposedScene scene = compose(env, targets, pose);
  out.cloud = scan(*scene.bvh, sector_config(sc.lidar, scene.target_bounds, cfg_.sector_margin_deg)).cloud;
  if (kind == Kind::kPedestrian) out.gt = scene.gt_box;
  return out;
}

}  // namespace advforge
