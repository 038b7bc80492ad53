#include "advforge/mesh_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "advforge/error.hpp"
#include "json.hpp"

namespace advforge {

namespace {

[[noreturn]] void obj_error(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::kInvalidMesh, "OBJ line " + std::to_string(line) + ": " + msg);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TriangleMesh parse_obj(std::string_view text, double default_reflectance) {
  TriangleMesh mesh;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) obj_error(line_no, "malformed vertex");
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) {
        const auto slash = tok.find('/');
        const std::string head = tok.substr(0, slash);
        long long v = 0;
        const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), v);
        if (ec != std::errc{} || ptr != head.data() + head.size()) obj_error(line_no, "bad face index '" + tok + "'");
        if (v < 0) obj_error(line_no, "negative face indices are not supported");
        if (v == 0 || static_cast<std::size_t>(v) > mesh.vertices.size()) obj_error(line_no, "face index out of range");
        idx.push_back(static_cast<std::uint32_t>(v - 1));
      }
      if (idx.size() < 3) obj_error(line_no, "face needs at least three vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
        mesh.reflectance.push_back(default_reflectance);
      }
    }
    // Other record types (vn, vt, o, g, s, usemtl) are ignored.
  }
  mesh.validate();
  return mesh;
}

TriangleMesh load_mesh(const std::filesystem::path& obj, const std::filesystem::path& sidecar) {
  std::filesystem::path side = sidecar;
  if (side.empty()) {
    auto candidate = obj;
    candidate.replace_extension(".json");
    if (std::filesystem::exists(candidate)) side = candidate;
  }
  double default_refl = 0.5;
  nlohmann::json meta;
  if (!side.empty()) {
    try {
      meta = nlohmann::json::parse(read_file(side));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidMesh, side.string() + ": " + e.what());
    }
    default_refl = meta.value("default_reflectance", 0.5);
  }
  TriangleMesh mesh = parse_obj(read_file(obj), default_refl);
  if (!meta.is_null()) {
    auto tri_index = [&](const std::string& key) {
      std::size_t t = 0;
      const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), t);
      if (ec != std::errc{} || ptr != key.data() + key.size() || t >= mesh.triangles.size()) {
        throw Error(ErrorCode::kInvalidMesh, side.string() + ": bad triangle key '" + key + "'");
      }
      return t;
    };
    if (meta.contains("reflectance")) {
      for (const auto& [key, value] : meta["reflectance"].items()) mesh.reflectance[tri_index(key)] = value.get<double>();
    }
    if (meta.contains("tags")) {
      mesh.tags.assign(mesh.triangles.size(), BodyRegion::kNone);
      for (const auto& [key, value] : meta["tags"].items()) {
        const auto region = parse_body_region(value.get<std::string>());
        if (!region) throw Error(ErrorCode::kInvalidMesh, side.string() + ": unknown tag " + value.dump());
        mesh.tags[tri_index(key)] = *region;
      }
    }
    mesh.validate();
  }
  return mesh;
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

}  // namespace advforge
