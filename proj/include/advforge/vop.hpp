#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "advforge/geometry.hpp"

namespace advforge {

struct Vocabulary {
  std::vector<std::string> verbs;
  std::vector<std::string> objects;
  std::vector<std::string> poses;
  std::string base = "a full body-shot of a person standing";

  std::size_t size() const noexcept { return verbs.size() * objects.size() * poses.size(); }
  /// Non-empty unique lists with known verbs and poses. Throws Error(kInvalidConfig).
  void validate() const;
};

struct PoolEntry {
  std::string name;
  TriangleMesh mesh;  // centred on its bounding-box centre, metres
  double default_scale = 1.0;
  std::string anchor_hint;  // how a person would grip or rest it
};

struct ObjectPool {
  std::vector<PoolEntry> entries;

  /// Throws Error(kUnknownObject).
  const PoolEntry& at(const std::string& name) const;
  bool contains(const std::string& name) const noexcept;
};

struct VopTriplet {
  std::size_t verb = 0;
  std::size_t object = 0;
  std::size_t pose = 0;

  auto operator<=>(const VopTriplet&) const = default;
};

/// Verbs and poses the attachment table understands.
const std::vector<std::string>& known_verbs();
const std::vector<std::string>& known_poses();

ObjectPool default_object_pool();
/// Every default pool object, five verbs and five poses.
Vocabulary default_vocabulary();

/// JSON manifests. A pool manifest lists {name, obj, sidecar?, default_scale?,
/// anchor_hint?}; relative paths resolve against the manifest's directory.
ObjectPool load_object_pool(const std::filesystem::path& manifest);
Vocabulary load_vocabulary(const std::filesystem::path& manifest);

/// Present participle, e.g. "hold" -> "holding".
std::string present_participle(const std::string& verb);

/// Throws Error(kIndexOutOfRange).
std::string concat_prompt(const VopTriplet& t, const Vocabulary& v);

/// Lexicographic (verb, object, pose) order; pose varies fastest.
std::vector<VopTriplet> enumerate_triplets(const Vocabulary& v);
std::size_t triplet_index(const VopTriplet& t, const Vocabulary& v);

/// Where the object of `t` goes relative to the pedestrian's frame.
/// Throws Error(kUnknownObject) / Error(kIndexOutOfRange).
Pose3D attachment_pose(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool, const TriangleMesh& ped);

/// The posed object alone, triangles tagged kNone.
TriangleMesh generate_object_part(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                                  const TriangleMesh& ped);

/// Pedestrian followed by the posed object. The pedestrian's triangles keep
/// their indices; object triangles are tagged kNone.
TriangleMesh generate_composition(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                                  const TriangleMesh& ped);

}  // namespace advforge
