#include "advforge/vop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "advforge/error.hpp"
#include "advforge/mesh_io.hpp"
#include "advforge/primitives.hpp"
#include "json.hpp"

namespace advforge {

namespace prim = primitives;

namespace {

constexpr double kHoldRaise = 0.3;
constexpr double kPushDistance = 0.5;
constexpr double kDragGap = 0.3;
constexpr double kWearScale = 0.9;

const std::vector<std::string> kVerbs{"hold", "carry", "push", "wear", "drag"};
const std::vector<std::string> kPoses{"on the head", "in front of the body", "on the back", "at the side",
                                      "near the legs"};

TriangleMesh centered(TriangleMesh m) {
  const Vec3 c = mesh_aabb(m).center;
  for (auto& v : m.vertices) v -= c;
  return m;
}

TriangleMesh join(std::initializer_list<TriangleMesh> parts) {
  TriangleMesh m;
  for (const auto& p : parts) m.append(p);
  return m;
}

TriangleMesh make_umbrella() {
  return join({prim::frustum(Vec3(0, 0, 0.85), Vec3(0, 0, 1.1), 0.5, 0.0, 16, 0.5),
               prim::cylinder(Vec3(0, 0, 0.0), Vec3(0, 0, 0.85), 0.015, 6, 0.5)});
}

TriangleMesh make_closed_umbrella() {
  return join({prim::frustum(Vec3(0, 0, 0.25), Vec3(0, 0, 0.95), 0.05, 0.01, 10, 0.5),
               prim::cylinder(Vec3(0, 0, 0.0), Vec3(0, 0, 0.25), 0.015, 6, 0.5)});
}

TriangleMesh make_ladder() {
  TriangleMesh m = join({prim::box(Vec3(-0.02, -0.24, 0.0), Vec3(0.02, -0.2, 1.8), 0.6),
                         prim::box(Vec3(-0.02, 0.2, 0.0), Vec3(0.02, 0.24, 1.8), 0.6)});
  for (int k = 1; k <= 6; ++k) {
    const double z = 0.25 * k;
    m.append(prim::cylinder(Vec3(0, -0.2, z), Vec3(0, 0.2, z), 0.015, 6, 0.6));
  }
  return m;
}

TriangleMesh make_cart() {
  TriangleMesh m = prim::box(Vec3(-0.3, -0.22, 0.35), Vec3(0.3, 0.22, 0.8), 0.7);
  for (double x : {-0.25, 0.25}) {
    for (double y : {-0.2, 0.2}) m.append(prim::cylinder(Vec3(x, y - 0.02, 0.08), Vec3(x, y + 0.02, 0.08), 0.08, 8, 0.3));
    m.append(prim::box(Vec3(x - 0.02, -0.2, 0.15), Vec3(x + 0.02, 0.2, 0.35), 0.7));
  }
  m.append(prim::cylinder(Vec3(-0.38, -0.22, 1.0), Vec3(-0.38, 0.22, 1.0), 0.015, 6, 0.7));
  m.append(prim::box(Vec3(-0.4, -0.22, 0.8), Vec3(-0.36, -0.18, 1.0), 0.7));
  m.append(prim::box(Vec3(-0.4, 0.18, 0.8), Vec3(-0.36, 0.22, 1.0), 0.7));
  return m;
}

TriangleMesh make_suitcase() {
  return join({prim::box(Vec3(-0.12, -0.22, 0.0), Vec3(0.12, 0.22, 0.65), 0.5),
               prim::box(Vec3(-0.02, -0.08, 0.65), Vec3(0.02, 0.08, 0.7), 0.5)});
}

TriangleMesh make_traffic_cone() {
  return join({prim::box(Vec3(-0.2, -0.2, 0.0), Vec3(0.2, 0.2, 0.03), 0.9),
               prim::frustum(Vec3(0, 0, 0.03), Vec3(0, 0, 0.7), 0.17, 0.025, 12, 0.9)});
}

TriangleMesh make_backpack() {
  return join({prim::box(Vec3(-0.09, -0.15, 0.0), Vec3(0.09, 0.15, 0.42), 0.4),
               prim::box(Vec3(-0.14, -0.11, 0.04), Vec3(-0.09, 0.11, 0.22), 0.4)});
}

TriangleMesh make_chair() {
  TriangleMesh m = prim::box(Vec3(-0.22, -0.22, 0.43), Vec3(0.22, 0.22, 0.47), 0.5);
  for (double x : {-0.2, 0.18}) {
    for (double y : {-0.2, 0.18}) m.append(prim::box(Vec3(x, y, 0.0), Vec3(x + 0.03, y + 0.03, 0.43), 0.5));
  }
  m.append(prim::box(Vec3(-0.22, -0.22, 0.47), Vec3(-0.19, 0.22, 0.95), 0.5));
  return m;
}

struct RegionBounds {
  Vec3 lo = Vec3::Constant(1e300);
  Vec3 hi = Vec3::Constant(-1e300);
  bool empty() const { return lo.x() > hi.x(); }
  void add(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void add(const RegionBounds& o) {
    if (!o.empty()) {
      add(o.lo);
      add(o.hi);
    }
  }
};

RegionBounds region_bounds(const TriangleMesh& ped, std::initializer_list<BodyRegion> regions) {
  RegionBounds b;
  for (std::size_t t = 0; t < ped.triangle_count(); ++t) {
    const BodyRegion tag = ped.tagged() ? ped.tags[t] : BodyRegion::kNone;
    if (std::find(regions.begin(), regions.end(), tag) == regions.end()) continue;
    for (int k = 0; k < 3; ++k) b.add(ped.corner(t, k));
  }
  return b;
}

struct Anchor {
  Vec3 point;
  Vec3 outward;  // unit axis vector
};

Anchor pose_anchor(const std::string& pose, const TriangleMesh& ped) {
  RegionBounds all;
  for (const auto& v : ped.vertices) all.add(v);
  RegionBounds torso = region_bounds(ped, {BodyRegion::kTorso});
  if (torso.empty()) torso = all;
  RegionBounds head = region_bounds(ped, {BodyRegion::kHead});
  if (head.empty()) head = all;
  const double chest_z = torso.lo.z() + 0.75 * (torso.hi.z() - torso.lo.z());
  if (pose == "on the head") {
    return {Vec3(0.5 * (head.lo.x() + head.hi.x()), 0.5 * (head.lo.y() + head.hi.y()), head.hi.z()), Vec3::UnitZ()};
  }
  if (pose == "in front of the body") return {Vec3(torso.hi.x(), 0.0, chest_z), Vec3::UnitX()};
  if (pose == "on the back") return {Vec3(torso.lo.x(), 0.0, chest_z), -Vec3::UnitX()};
  if (pose == "at the side") {
    RegionBounds side = torso;
    side.add(region_bounds(ped, {BodyRegion::kArms}));
    return {Vec3(0.0, side.lo.y(), torso.lo.z() + 0.1), -Vec3::UnitY()};
  }
  if (pose == "near the legs") {
    RegionBounds front = torso;
    front.add(region_bounds(ped, {BodyRegion::kLegs}));
    return {Vec3(front.hi.x(), 0.0, 0.3), Vec3::UnitX()};
  }
  throw Error(ErrorCode::kInvalidConfig, "no anchor for pose '" + pose + "'");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& known_verbs() { return kVerbs; }
const std::vector<std::string>& known_poses() { return kPoses; }

void Vocabulary::validate() const {
  auto check = [](const std::vector<std::string>& list, const char* what) {
    if (list.empty()) throw Error(ErrorCode::kInvalidConfig, std::string("vocabulary has no ") + what);
    if (std::set<std::string>(list.begin(), list.end()).size() != list.size()) {
      throw Error(ErrorCode::kInvalidConfig, std::string("duplicate ") + what);
    }
  };
  check(verbs, "verbs");
  check(objects, "objects");
  check(poses, "poses");
  for (const auto& v : verbs) {
    if (std::find(kVerbs.begin(), kVerbs.end(), v) == kVerbs.end()) {
      throw Error(ErrorCode::kInvalidConfig, "verb '" + v + "' has no attachment rule");
    }
  }
  for (const auto& p : poses) {
    if (std::find(kPoses.begin(), kPoses.end(), p) == kPoses.end()) {
      throw Error(ErrorCode::kInvalidConfig, "pose '" + p + "' has no anchor");
    }
  }
}

const PoolEntry& ObjectPool::at(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw Error(ErrorCode::kUnknownObject, "object '" + name + "' is not in the pool");
}

bool ObjectPool::contains(const std::string& name) const noexcept {
  return std::any_of(entries.begin(), entries.end(), [&](const PoolEntry& e) { return e.name == name; });
}

ObjectPool default_object_pool() {
  ObjectPool pool;
  auto add = [&](std::string name, TriangleMesh mesh, std::string hint) {
    pool.entries.push_back({std::move(name), centered(std::move(mesh)), 1.0, std::move(hint)});
  };
  add("umbrella", make_umbrella(), "shaft");
  add("closed umbrella", make_closed_umbrella(), "shaft");
  add("small box", prim::box(Vec3(0, 0, 0), Vec3(0.25, 0.3, 0.25), 0.6), "base");
  add("large box", prim::box(Vec3(0, 0, 0), Vec3(0.5, 0.6, 0.5), 0.6), "base");
  add("board", prim::box(Vec3(0, 0, 0), Vec3(0.03, 0.9, 1.2), 0.6), "edge");
  add("backpack", make_backpack(), "straps");
  add("ladder", make_ladder(), "rail");
  add("cart", make_cart(), "handle");
  add("suitcase", make_suitcase(), "handle");
  add("traffic cone", make_traffic_cone(), "base");
  add("bucket", prim::frustum(Vec3(0, 0, 0), Vec3(0, 0, 0.3), 0.13, 0.16, 12, 0.5), "rim");
  add("tube", prim::cylinder(Vec3(0, -0.6, 0), Vec3(0, 0.6, 0), 0.08, 10, 0.5), "middle");
  add("chair", make_chair(), "backrest");
  return pool;
}

Vocabulary default_vocabulary() {
  Vocabulary v;
  v.verbs = kVerbs;
  v.poses = kPoses;
  for (const auto& e : default_object_pool().entries) v.objects.push_back(e.name);
  return v;
}

ObjectPool load_object_pool(const std::filesystem::path& manifest) {
  const auto j = read_json(manifest);
  const auto dir = manifest.parent_path();
  ObjectPool pool;
  if (!j.contains("objects") || !j["objects"].is_array()) {
    throw Error(ErrorCode::kInvalidConfig, manifest.string() + ": expected an 'objects' array");
  }
  for (const auto& o : j["objects"]) {
    PoolEntry e;
    e.name = o.at("name").get<std::string>();
    const std::filesystem::path obj = dir / o.at("obj").get<std::string>();
    const std::filesystem::path side = o.contains("sidecar") ? dir / o["sidecar"].get<std::string>() : "";
    e.mesh = centered(load_mesh(obj, side));
    e.mesh.tags.assign(e.mesh.triangle_count(), BodyRegion::kNone);
    e.default_scale = o.value("default_scale", 1.0);
    e.anchor_hint = o.value("anchor_hint", "");
    if (!(e.default_scale > 0.0)) throw Error(ErrorCode::kInvalidConfig, e.name + ": default_scale must be > 0");
    if (pool.contains(e.name)) throw Error(ErrorCode::kInvalidConfig, "duplicate pool object '" + e.name + "'");
    pool.entries.push_back(std::move(e));
  }
  if (pool.entries.empty()) throw Error(ErrorCode::kInvalidConfig, manifest.string() + ": empty pool");
  return pool;
}

Vocabulary load_vocabulary(const std::filesystem::path& manifest) {
  const auto j = read_json(manifest);
  Vocabulary v;
  try {
    v.verbs = j.at("verbs").get<std::vector<std::string>>();
    v.objects = j.at("objects").get<std::vector<std::string>>();
    v.poses = j.at("poses").get<std::vector<std::string>>();
    if (j.contains("base")) v.base = j["base"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, manifest.string() + ": " + e.what());
  }
  v.validate();
  return v;
}

// ---------------------------------------------------------------------------

std::string present_participle(const std::string& verb) {
  static const std::map<std::string, std::string> table{
      {"hold", "holding"}, {"carry", "carrying"}, {"push", "pushing"}, {"wear", "wearing"},
      {"drag", "dragging"}, {"pull", "pulling"},  {"lift", "lifting"}, {"balance", "balancing"}};
  if (auto it = table.find(verb); it != table.end()) return it->second;
  if (verb.size() > 2 && verb.back() == 'e' && verb[verb.size() - 2] != 'e') return verb.substr(0, verb.size() - 1) + "ing";
  return verb + "ing";
}

std::string concat_prompt(const VopTriplet& t, const Vocabulary& v) {
  if (t.verb >= v.verbs.size() || t.object >= v.objects.size() || t.pose >= v.poses.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "triplet index out of range");
  }
  const std::string& object = v.objects[t.object];
  const bool vowel = !object.empty() && std::string_view("aeiou").find(object[0]) != std::string_view::npos;
  std::ostringstream ss;
  ss << v.base << " and " << present_participle(v.verbs[t.verb]) << (vowel ? " an " : " a ") << object << ' '
     << v.poses[t.pose] << '.';
  return ss.str();
}

std::vector<VopTriplet> enumerate_triplets(const Vocabulary& v) {
  std::vector<VopTriplet> out;
  out.reserve(v.size());
  for (std::size_t a = 0; a < v.verbs.size(); ++a) {
    for (std::size_t b = 0; b < v.objects.size(); ++b) {
      for (std::size_t c = 0; c < v.poses.size(); ++c) out.push_back({a, b, c});
    }
  }
  return out;
}

std::size_t triplet_index(const VopTriplet& t, const Vocabulary& v) {
  return (t.verb * v.objects.size() + t.object) * v.poses.size() + t.pose;
}

Pose3D attachment_pose(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool, const TriangleMesh& ped) {
  if (t.verb >= v.verbs.size() || t.object >= v.objects.size() || t.pose >= v.poses.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "triplet index out of range");
  }
  const PoolEntry& entry = pool.at(v.objects[t.object]);
  const std::string& verb = v.verbs[t.verb];
  const Anchor anchor = pose_anchor(v.poses[t.pose], ped);

  const double scale = entry.default_scale * (verb == "wear" ? kWearScale : 1.0);
  const Vec3 raw = mesh_aabb(entry.mesh).size * scale;

  // Horizontal direction the object is pushed away from the body along.
  const Vec3 horizontal = std::abs(anchor.outward.z()) > 0.5 ? Vec3::UnitX() : anchor.outward;
  // Quarter turn so the thinner horizontal side faces the body.
  const bool along_x = std::abs(horizontal.x()) > 0.5;
  const bool turn = along_x ? raw.x() > raw.y() : raw.y() > raw.x();
  const double yaw = turn ? 0.5 * std::numbers::pi : 0.0;
  const Vec3 half = 0.5 * (turn ? Vec3(raw.y(), raw.x(), raw.z()) : raw);
  auto half_along = [&](const Vec3& axis) { return std::abs(axis.x()) * half.x() + std::abs(axis.y()) * half.y() + std::abs(axis.z()) * half.z(); };

  Vec3 c = anchor.point + anchor.outward * half_along(anchor.outward);
  if (verb == "hold") {
    c.z() += kHoldRaise;
  } else if (verb == "push") {
    c = anchor.point + horizontal * (half_along(horizontal) + kPushDistance);
    c.z() = half.z();
  } else if (verb == "drag") {
    RegionBounds all;
    for (const auto& p : ped.vertices) all.add(p);
    c = Vec3(all.lo.x() - kDragGap - half.x(), anchor.point.y(), half.z());
  }
  if (c.z() - half.z() < 0.0) c.z() = half.z();
  return Pose3D::make(c, yaw, scale);
}

TriangleMesh generate_object_part(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                                  const TriangleMesh& ped) {
  const Pose3D pose = attachment_pose(t, v, pool, ped);
  TriangleMesh part = transform_mesh(pool.at(v.objects[t.object]).mesh, pose);
  part.tags.assign(part.triangle_count(), BodyRegion::kNone);
  return part;
}

TriangleMesh generate_composition(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                                  const TriangleMesh& ped) {
  TriangleMesh out = ped;
  if (!out.tagged()) out.tags.assign(out.triangle_count(), BodyRegion::kNone);
  out.append(generate_object_part(t, v, pool, ped));
  return out;
}

}  // namespace advforge
