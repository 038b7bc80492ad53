#include <filesystem>
#include <fstream>
#include <set>

#include "advforge/error.hpp"
#include "advforge/mesh_io.hpp"
#include "advforge/scene.hpp"
#include "advforge/vop.hpp"
#include "doctest.h"

using namespace advforge;
namespace fs = std::filesystem;

TEST_CASE("default vocabulary spans 5 x 13 x 5 triplets in lexicographic order") {
  const auto v = default_vocabulary();
  CHECK_NOTHROW(v.validate());
  CHECK(v.verbs.size() == 5);
  CHECK(v.objects.size() == 13);
  CHECK(v.poses.size() == 5);
  const auto all = enumerate_triplets(v);
  REQUIRE(all.size() == 325);
  CHECK(std::is_sorted(all.begin(), all.end()));
  CHECK(std::set<VopTriplet>(all.begin(), all.end()).size() == 325);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(triplet_index(all[i], v) == i);
  CHECK(all[1].pose == 1);  // pose varies fastest
}

TEST_CASE("prompts concatenate base, participle, article, object and pose") {
  Vocabulary v;
  v.verbs = {"carry", "wear"};
  v.objects = {"ladder", "umbrella"};
  v.poses = {"on the back"};
  CHECK(concat_prompt({0, 0, 0}, v) == "a full body-shot of a person standing and carrying a ladder on the back.");
  CHECK(concat_prompt({1, 1, 0}, v) == "a full body-shot of a person standing and wearing an umbrella on the back.");
  CHECK_THROWS_AS(concat_prompt({2, 0, 0}, v), Error);
  CHECK(present_participle("drag") == "dragging");
  CHECK(present_participle("make") == "making");
}

TEST_CASE("vocabulary validation") {
  Vocabulary v = default_vocabulary();
  v.verbs.push_back("juggle");
  CHECK_THROWS_AS(v.validate(), Error);
  v = default_vocabulary();
  v.poses.push_back(v.poses.front());
  CHECK_THROWS_AS(v.validate(), Error);
  v = default_vocabulary();
  v.objects.clear();
  CHECK_THROWS_AS(v.validate(), Error);
}

TEST_CASE("default pool objects are centred valid meshes") {
  const auto pool = default_object_pool();
  CHECK(pool.entries.size() == 13);
  for (const auto& e : pool.entries) {
    CHECK_NOTHROW(e.mesh.validate());
    CHECK(mesh_aabb(e.mesh).center.norm() < 1e-9);
    CHECK(pool.contains(e.name));
  }
  CHECK_THROWS_AS(pool.at("piano"), Error);
}

TEST_CASE("compositions keep the pedestrian and add an untagged object") {
  const auto v = default_vocabulary();
  const auto pool = default_object_pool();
  const auto ped = build_pedestrian_template();
  for (const auto& t : enumerate_triplets(v)) {
    const auto comp = generate_composition(t, v, pool, ped);
    REQUIRE(comp.triangle_count() > ped.triangle_count());
    for (std::size_t i = 0; i < ped.triangle_count(); ++i) CHECK(comp.tags[i] == ped.tags[i]);
    for (std::size_t i = ped.triangle_count(); i < comp.triangle_count(); ++i) CHECK(comp.tags[i] == BodyRegion::kNone);
    const auto part = generate_object_part(t, v, pool, ped);
    CHECK(part.triangle_count() == comp.triangle_count() - ped.triangle_count());
    // Objects stay above the ground and near the person.
    const Box3D bb = mesh_aabb(part);
    CHECK(bb.bottom() >= -1e-9);
    CHECK(bb.center.head<2>().norm() < 1.5);
  }
}

TEST_CASE("pose changes where the object goes") {
  const auto v = default_vocabulary();
  const auto pool = default_object_pool();
  const auto ped = build_pedestrian_template();
  const std::size_t box = static_cast<std::size_t>(
      std::find(v.objects.begin(), v.objects.end(), "small box") - v.objects.begin());
  REQUIRE(box < v.objects.size());
  const auto head = mesh_aabb(generate_object_part({0, box, 0}, v, pool, ped));  // on the head
  const auto legs = mesh_aabb(generate_object_part({0, box, 4}, v, pool, ped));  // near the legs
  CHECK(head.center.z() > legs.center.z() + 0.5);
  CHECK_THROWS_AS(generate_object_part({0, 99, 0}, v, pool, ped), Error);
}

TEST_CASE("pool and vocabulary manifests load from JSON") {
  const auto dir = fs::temp_directory_path() / "advforge_tests_vop";
  fs::create_directories(dir);
  write_obj(default_object_pool().at("traffic cone").mesh, dir / "cone.obj");
  std::ofstream(dir / "pool.json") << R"({"objects": [{"name": "cone", "obj": "cone.obj", "default_scale": 1.5, "anchor_hint": "hand"}]})";
  const auto pool = load_object_pool(dir / "pool.json");
  REQUIRE(pool.entries.size() == 1);
  CHECK(pool.at("cone").default_scale == 1.5);
  CHECK(pool.at("cone").mesh.triangle_count() == default_object_pool().at("traffic cone").mesh.triangle_count());

  std::ofstream(dir / "vocab.json") << R"({"verbs": ["hold"], "objects": ["cone"], "poses": ["at the side"]})";
  const auto v = load_vocabulary(dir / "vocab.json");
  CHECK(v.size() == 1);
  CHECK_NOTHROW(attachment_pose({0, 0, 0}, v, pool, build_pedestrian_template()));
}
