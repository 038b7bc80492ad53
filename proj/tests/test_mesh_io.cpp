#include <filesystem>
#include <fstream>

#include "advforge/error.hpp"
#include "advforge/mesh_io.hpp"
#include "advforge/primitives.hpp"
#include "doctest.h"

using namespace advforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "advforge_tests_mesh";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("OBJ quads are fan triangulated") {
  const auto m = parse_obj("# square\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", 0.3);
  REQUIRE(m.triangle_count() == 2);
  CHECK(m.triangles[0] == std::array<std::uint32_t, 3>{0, 1, 2});
  CHECK(m.triangles[1] == std::array<std::uint32_t, 3>{0, 2, 3});
  CHECK(m.reflectance == std::vector<double>{0.3, 0.3});
  CHECK_FALSE(m.tagged());
}

TEST_CASE("OBJ face tokens with texture and normal indices") {
  const auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3/2\n");
  REQUIRE(m.triangle_count() == 1);
  CHECK(m.triangles[0] == std::array<std::uint32_t, 3>{0, 1, 2});
}

TEST_CASE("malformed OBJ input is rejected") {
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -1 -2 -3\n"), Error);
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"), Error);
  CHECK_THROWS_AS(parse_obj("v 0 0\n"), Error);
  CHECK_THROWS_AS(parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"), Error);  // degenerate
}

TEST_CASE("OBJ write then load round trips geometry") {
  const auto mesh = primitives::sphere(Vec3(0.1, 0.2, 0.3), 0.5, 6, 8, 0.5);
  const auto path = scratch("sphere.obj");
  write_obj(mesh, path);
  const auto back = load_mesh(path);
  REQUIRE(back.triangle_count() == mesh.triangle_count());
  REQUIRE(back.vertices.size() == mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-6);
  CHECK(back.triangles == mesh.triangles);
}

TEST_CASE("sidecar JSON sets reflectance and tags per triangle") {
  const auto obj = scratch("tri2.obj");
  write_text(obj, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n");
  write_text(scratch("tri2.json"),
             R"({"default_reflectance": 0.2, "reflectance": {"1": 0.9}, "tags": {"0": "head", "1": "feet"}})");
  const auto m = load_mesh(obj);
  CHECK(m.reflectance == std::vector<double>{0.2, 0.9});
  REQUIRE(m.tagged());
  CHECK(m.tags[0] == BodyRegion::kHead);
  CHECK(m.tags[1] == BodyRegion::kFeet);

  const auto bad = scratch("tri2_bad.json");
  write_text(bad, R"({"tags": {"5": "head"}})");
  CHECK_THROWS_AS(load_mesh(obj, bad), Error);
  write_text(bad, R"({"reflectance": {"0": 2.0}})");
  CHECK_THROWS_AS(load_mesh(obj, bad), Error);
  write_text(bad, R"({"tags": {"0": "tail"}})");
  CHECK_THROWS_AS(load_mesh(obj, bad), Error);
}

TEST_CASE("missing OBJ file is an error") {
  CHECK_THROWS_AS(load_mesh(scratch("does_not_exist.obj")), Error);
}
