#include <numbers>
#include <set>

#include "advforge/error.hpp"
#include "advforge/scene.hpp"
#include "doctest.h"

using namespace advforge;

namespace {

std::size_t count_tag(const TriangleMesh& m, BodyRegion r) {
  return static_cast<std::size_t>(std::count(m.tags.begin(), m.tags.end(), r));
}

}  // namespace

TEST_CASE("pedestrian template is tagged, about 1.75 m tall and standing on the ground") {
  const auto ped = build_pedestrian_template();
  CHECK_NOTHROW(ped.validate());
  REQUIRE(ped.tagged());
  const Box3D bb = mesh_aabb(ped);
  CHECK(bb.bottom() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(bb.size.z() == doctest::Approx(1.75).epsilon(0.03));
  for (auto r : {BodyRegion::kFeet, BodyRegion::kLegs, BodyRegion::kTorso, BodyRegion::kArms, BodyRegion::kHead}) {
    CHECK(count_tag(ped, r) > 0);
  }
}

TEST_CASE("shipped environments build and keep the ground first") {
  for (const auto& name : environment_names()) {
    const auto env = make_environment(name, 3);
    REQUIRE_FALSE(env.static_meshes.empty());
    CHECK(mesh_aabb(env.static_meshes[0]).size.z() <= 2 * kMinBoxExtent);
    for (const auto& m : env.static_meshes) CHECK_NOTHROW(m.validate());
  }
  CHECK(environment_names().size() == 3);
  CHECK_THROWS_AS(make_environment("moon"), Error);
}

TEST_CASE("topology masking removes exactly the masked regions") {
  const auto ped = build_pedestrian_template();
  AttributeSpec spec;
  spec.topology_mask = {BodyRegion::kArms, BodyRegion::kHead};
  const auto out = apply_attributes(ped, spec);
  CHECK(count_tag(out.mesh, BodyRegion::kArms) == 0);
  CHECK(count_tag(out.mesh, BodyRegion::kHead) == 0);
  CHECK(count_tag(out.mesh, BodyRegion::kTorso) == count_tag(ped, BodyRegion::kTorso));
  CHECK(out.mesh.triangle_count() ==
        ped.triangle_count() - count_tag(ped, BodyRegion::kArms) - count_tag(ped, BodyRegion::kHead));
  CHECK(out.occluders.empty());
}

TEST_CASE("connectivity gap leaves no triangle inside the slab") {
  const auto ped = build_pedestrian_template();
  AttributeSpec spec;
  spec.connectivity_gap = ConnectivityGap{2, 0.1, 1.0};
  const auto out = apply_attributes(ped, spec);
  CHECK(out.mesh.triangle_count() < ped.triangle_count());
  for (std::size_t t = 0; t < out.mesh.triangle_count(); ++t) {
    double lo = 1e300, hi = -1e300;
    for (int k = 0; k < 3; ++k) {
      lo = std::min(lo, out.mesh.corner(t, k).z());
      hi = std::max(hi, out.mesh.corner(t, k).z());
    }
    CHECK((hi <= 0.95 || lo >= 1.05));
  }
}

TEST_CASE("intensity factor scales reflectance and clamps to one") {
  const auto ped = build_pedestrian_template();
  AttributeSpec spec;
  spec.intensity_factor = 0.2;
  auto out = apply_attributes(ped, spec);
  REQUIRE(out.mesh.triangle_count() == ped.triangle_count());
  for (std::size_t t = 0; t < ped.triangle_count(); ++t) CHECK(out.mesh.reflectance[t] == doctest::Approx(0.2 * ped.reflectance[t]));
  spec.intensity_factor = 50.0;
  out = apply_attributes(ped, spec);
  for (double r : out.mesh.reflectance) CHECK(r <= 1.0);
  spec.intensity_factor = -1.0;
  CHECK_THROWS_AS(apply_attributes(ped, spec), Error);
}

TEST_CASE("occluders cover the chosen region") {
  const auto ped = build_pedestrian_template();
  for (auto region : {BodyRegion::kFeet, BodyRegion::kTorso, BodyRegion::kHead}) {
    AttributeSpec spec;
    spec.occluder = region;
    const auto out = apply_attributes(ped, spec);
    REQUIRE(out.occluders.size() == 1);
    const Box3D cube = mesh_aabb(out.occluders[0]);
    CHECK(cube.bottom() >= -1e-12);
    for (std::size_t t = 0; t < ped.triangle_count(); ++t) {
      if (ped.tags[t] != region) continue;
      for (int k = 0; k < 3; ++k) CHECK(cube.contains(ped.corner(t, k)));
    }
    CHECK(out.mesh.triangle_count() == ped.triangle_count());
  }
}

TEST_CASE("attribute edits need tags and must leave something") {
  auto ped = build_pedestrian_template();
  AttributeSpec all;
  all.topology_mask = {BodyRegion::kFeet, BodyRegion::kLegs, BodyRegion::kTorso, BodyRegion::kArms, BodyRegion::kHead};
  CHECK_THROWS_AS(apply_attributes(ped, all), Error);
  ped.tags.clear();
  AttributeSpec spec;
  spec.intensity_factor = 0.5;
  CHECK_THROWS_AS(apply_attributes(ped, spec), Error);
}

TEST_CASE("placement puts the target at the requested range and bearing facing the sensor") {
  const auto ped = build_pedestrian_template();
  ScenarioConfig cfg;
  cfg.env = make_environment("open_lot");
  cfg.distance = 12.0;
  cfg.angle_deg = 30.0;
  const Pose3D pose = place_target(ped, cfg);
  const Vec3 ground = pose.apply(Vec3::Zero());
  const Vec2 rel = (ground - cfg.lidar.origin).head<2>();
  CHECK(rel.norm() == doctest::Approx(12.0));
  CHECK(std::atan2(rel.y(), rel.x()) == doctest::Approx(30.0 * std::numbers::pi / 180.0));
  // Local +x points back at the sensor.
  const Vec3 forward = pose.apply(Vec3::UnitX()) - ground;
  CHECK(forward.head<2>().normalized().dot(-rel.normalized()) == doctest::Approx(1.0));

  const std::vector<TriangleMesh> targets{ped};
  const auto scene = compose(cfg.env, targets, pose);
  CHECK(scene.env_mesh_count == cfg.env.static_meshes.size());
  CHECK(scene.gt_box.bottom() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(scene.gt_box.center.head<2>().isApprox(ground.head<2>(), 0.05));
  CHECK(normalize_yaw(scene.gt_box.yaw - pose.yaw) == doctest::Approx(0.0));
  CHECK(scene.is_target(HitSource{scene.env_mesh_count, 0}));
  CHECK_FALSE(scene.is_target(HitSource{0, 0}));
  CHECK_THROWS_AS(compose(cfg.env, std::span<const TriangleMesh>{}, pose), Error);
}

TEST_CASE("sampled placements respect the range and are clear") {
  const auto env = make_environment("street", 1);
  const PlacementRange range{5.0, 30.0, 45.0, 24.0};
  const Vec3 origin(0, 0, 1.73);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = sample_placement(env, range, origin, s);
    CHECK(p.distance >= 5.0);
    CHECK(p.distance <= 30.0);
    CHECK(std::abs(p.angle_deg > 180.0 ? p.angle_deg - 360.0 : p.angle_deg) <= 45.0);
    CHECK(placement_clear(env, p, origin));
    const auto q = sample_placement(env, range, origin, s);
    CHECK(q.distance == p.distance);
  }
}

TEST_CASE("scenario validation rejects bad values") {
  ScenarioConfig cfg;
  cfg.env = make_environment("open_lot");
  CHECK_NOTHROW(cfg.validate());
  cfg.distance = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.distance = 10.0;
  cfg.n_frames = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("sector lidar keeps every ray that can reach the target") {
  LidarConfig cfg;
  Box3D bounds;
  bounds.center = Vec3(10, 5, 0.9);
  bounds.size = Vec3(1, 1, 1.8);
  const auto sector = sector_config(cfg, bounds, 10.0);
  const double az = std::atan2(5.0, 10.0) * 180.0 / std::numbers::pi;
  CHECK(sector.azimuth_min_deg < az - 10.0);
  CHECK(sector.azimuth_max_deg > az + 10.0);
  CHECK(sector.columns() == cfg.columns());
}
