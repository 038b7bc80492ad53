#include <chrono>
#include <numbers>
#include <random>

#include "advforge/error.hpp"
#include "advforge/geometry.hpp"
#include "advforge/primitives.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace advforge;

namespace {

Box3D random_box(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> pos(-2.0, 2.0), size(0.3, 3.0), yaw(-std::numbers::pi, std::numbers::pi),
      z(-0.5, 0.5);
  Box3D b;
  b.center = Vec3(pos(gen), pos(gen), z(gen));
  b.size = Vec3(size(gen), size(gen), size(gen));
  b.yaw = yaw(gen);
  return b;
}

std::vector<Vec3> random_cloud(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> out(n);
  for (auto& p : out) p = Vec3(g(gen), g(gen), g(gen));
  return out;
}

}  // namespace

TEST_CASE("iou3d agrees with jittered voxel sampling on random yawed pairs") {
  std::mt19937_64 gen(20240611);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  int overlapping = 0;
  for (int i = 0; i < 1000; ++i) {
    const Box3D a = random_box(gen);
    Box3D b = random_box(gen);
    // Keep most pairs overlapping so the comparison is not trivially zero.
    b.center = a.center + 0.4 * (b.center - a.center);
    const double got = iou3d(a, b);
    const double ref = oracle::voxel_iou(a, b, 48, gen);
    overlapping += ref > 0.0;
    worst = std::max(worst, std::abs(got - ref));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(worst < 1e-2);
  CHECK(overlapping > 800);
  CHECK(secs < 60.0);
}

TEST_CASE("iou3d basic identities") {
  Box3D a;
  a.size = Vec3(2.0, 1.0, 1.0);
  CHECK(iou3d(a, a) == doctest::Approx(1.0));
  Box3D b = a;
  b.center.x() = 1.0;  // half overlap along x
  CHECK(iou3d(a, b) == doctest::Approx(1.0 / 3.0));
  b.center.z() = 0.5;  // and half along z
  CHECK(iou3d(a, b) == doctest::Approx(0.25 / 1.75));
  b.center = Vec3(10.0, 0.0, 0.0);
  CHECK(iou3d(a, b) == 0.0);
  Box3D r = a;
  r.yaw = std::numbers::pi;  // symmetric under half turns
  CHECK(iou3d(a, r) == doctest::Approx(1.0));
}

TEST_CASE("iou3d is symmetric and bounded") {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 500; ++i) {
    const Box3D a = random_box(gen), b = random_box(gen);
    const double ab = iou3d(a, b), ba = iou3d(b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0 + 1e-12);
    CHECK(bev_iou(a, b) >= 0.0);
  }
}

TEST_CASE("bev overlap of degenerate footprints is zero") {
  Box3D a;
  a.size = Vec3(0.0, 1.0, 1.0);
  Box3D b;
  CHECK(bev_iou(a, b) == doctest::Approx(0.0));
  CHECK(iou3d(a, b) == doctest::Approx(0.0));
}

TEST_CASE("bev corners are counter-clockwise") {
  Box3D b;
  b.size = Vec3(4.0, 2.0, 1.0);
  b.yaw = 0.7;
  const auto c = b.bev_corners();
  double area2 = 0.0;
  for (int i = 0; i < 4; ++i) {
    const auto& p = c[i];
    const auto& q = c[(i + 1) % 4];
    area2 += p.x() * q.y() - q.x() * p.y();
  }
  CHECK(0.5 * area2 == doctest::Approx(8.0));
}

TEST_CASE("chamfer equals the quadratic nearest-neighbour sum exactly") {
  std::mt19937_64 gen(99);
  std::uniform_int_distribution<int> count(1, 400);
  const auto start = std::chrono::steady_clock::now();
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = random_cloud(gen, static_cast<std::size_t>(count(gen)));
    const auto b = random_cloud(gen, static_cast<std::size_t>(count(gen)));
    exact += chamfer(a, b) == oracle::brute_chamfer(a, b);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(exact == 100);
  CHECK(secs < 60.0);
}

TEST_CASE("chamfer of a cloud with itself is zero and empty clouds throw") {
  std::mt19937_64 gen(3);
  const auto a = random_cloud(gen, 50);
  CHECK(chamfer(a, a) == 0.0);
  std::vector<Vec3> none;
  CHECK_THROWS_AS(chamfer(a, none), Error);
}

TEST_CASE("k-d tree nearest neighbour matches brute force including ties") {
  std::mt19937_64 gen(11);
  auto pts = random_cloud(gen, 2000);
  // Duplicate points: the lower index must win.
  pts.push_back(pts[17]);
  pts.push_back(pts[3]);
  const NearestNeighborIndex index(pts);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 q = i < 1000 ? random_cloud(gen, 1)[0] * 1.5 : pts[static_cast<std::size_t>(i - 1000)];
    const auto [idx, d] = index.nearest(q);
    const auto [ridx, rd] = oracle::brute_nearest(pts, q);
    CHECK(idx == ridx);
    CHECK(d == rd);
  }
}

TEST_CASE("pose composition and yaw normalisation") {
  const Pose3D a = Pose3D::make(Vec3(1, 2, 3), 0.3, 2.0);
  const Pose3D b = Pose3D::make(Vec3(-1, 0.5, 0), -1.1, 0.5);
  const Vec3 v(0.2, -0.7, 1.3);
  CHECK((a.then(b).apply(v) - b.apply(a.apply(v))).norm() < 1e-12);
  CHECK((a.apply(Vec3::Zero()) - Vec3(1, 2, 3)).norm() < 1e-12);
  for (double y : {-10.0, -3.2, 0.0, 3.0, 3.2, 17.0}) {
    const double n = normalize_yaw(y);
    CHECK(n >= -std::numbers::pi);
    CHECK(n < std::numbers::pi);
    CHECK(std::abs(std::remainder(n - y, 2.0 * std::numbers::pi)) < 1e-9);
  }
}

TEST_CASE("mesh append, validation and bounds") {
  const auto box = primitives::box(Vec3(0, 0, 0), Vec3(1, 2, 3), 0.4, BodyRegion::kTorso);
  CHECK_NOTHROW(box.validate());
  const Box3D bb = mesh_aabb(box);
  CHECK((bb.center - Vec3(0.5, 1.0, 1.5)).norm() < 1e-12);
  CHECK((bb.size - Vec3(1, 2, 3)).norm() < 1e-12);

  TriangleMesh m = box;
  m.append(primitives::box(Vec3(2, 0, 0), Vec3(3, 1, 1), 0.2));
  CHECK(m.triangle_count() == 2 * box.triangle_count());
  CHECK(m.tags.size() == m.triangle_count());
  CHECK(m.tags.back() == BodyRegion::kNone);

  TriangleMesh bad = box;
  bad.triangles[0][1] = 1000;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = box;
  bad.reflectance[0] = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = box;
  bad.triangles[0] = {0, 0, 1};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("body region names round trip") {
  for (auto r : {BodyRegion::kNone, BodyRegion::kFeet, BodyRegion::kLegs, BodyRegion::kTorso, BodyRegion::kArms,
                 BodyRegion::kHead}) {
    CHECK(parse_body_region(to_string(r)) == r);
  }
  CHECK_FALSE(parse_body_region("tail").has_value());
}
