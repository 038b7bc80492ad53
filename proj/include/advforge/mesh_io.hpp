#pragma once

#include <filesystem>
#include <string_view>

#include "advforge/geometry.hpp"

namespace advforge {

/// Parses ASCII Wavefront OBJ text (v/f records only). Polygons are fan
/// triangulated; negative (relative) indices are rejected. Every triangle gets
/// `default_reflectance` and no tags.
TriangleMesh parse_obj(std::string_view text, double default_reflectance = 0.5);

/// Loads an OBJ file plus an optional sidecar JSON of the form
///   {"reflectance": {"<tri>": r, ...}, "tags": {"<tri>": "head", ...},
///    "default_reflectance": r}
/// When `sidecar` is empty, "<obj stem>.json" next to the OBJ is used if present.
TriangleMesh load_mesh(const std::filesystem::path& obj, const std::filesystem::path& sidecar = {});

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace advforge
