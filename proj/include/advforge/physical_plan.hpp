#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advforge/adversarial.hpp"
#include "advforge/detector.hpp"
#include "advforge/scene.hpp"
#include "advforge/vop.hpp"

namespace advforge {

/// Area-weighted uniform surface samples. The stream depends only on the seed
/// and the triangle order, so similar meshes (same triangles under a uniform
/// scale, yaw and shift) yield correspondingly transformed samples.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

struct Placement3D {
  std::string object;  // pool entry name
  Pose3D pose;         // applied to the (centred) pool mesh, person frame
};

struct AssemblyPlan {
  std::vector<Placement3D> placements;
  double residual = 0.0;  // chamfer distance to the target, m
  std::vector<double> residual_history;  // after each accepted placement
  std::optional<VopTriplet> triplet;
  std::string prompt;
};

struct PlanOptions {
  std::size_t surface_samples = 4096;
  std::size_t coarse_samples = 512;  // sample prefix used to rank the coarse grid
  std::uint64_t seed = 0;
  int yaw_steps = 16;
  std::vector<double> coarse_scales{0.7, 1.0, 1.4};
  double translation_step = 0.01;  // m
  double yaw_step_deg = 1.0;
  double scale_step = 0.01;        // relative
  double refine_tolerance = 1e-4;  // m, per descent sweep
  double min_improvement = 1e-3;   // m, per greedy placement
};

inline constexpr double kMinPlanScale = 0.5;
inline constexpr double kMaxPlanScale = 2.0;

/// Greedy selection of posed pool objects approximating `target`, each
/// refined by coordinate descent. Throws Error(kEmptyTarget) for an empty
/// target and Error(kInvalidConfig) for budget < 1 or an empty pool.
AssemblyPlan plan_assembly(const TriangleMesh& target, const ObjectPool& pool, int budget,
                           const PlanOptions& options = {});

/// Mesh of every planned object, in the person frame.
TriangleMesh assemble(const AssemblyPlan& plan, const ObjectPool& pool);

/// Pedestrian plus `objects` (person frame), scanned in the attack sector and
/// scored against the pedestrian's box.
TrialScore score_with_objects(const TriangleMesh& objects, const TriangleMesh& ped, const ScenarioConfig& scenario,
                              const DetectorParams& params);

/// Pedestrian plus planned objects, scanned and scored in the scenario.
TrialScore validate_plan(const AssemblyPlan& plan, const ObjectPool& pool, const TriangleMesh& ped,
                         const ScenarioConfig& scenario, const DetectorParams& params);

/// Per object: name, position (m, from the person's ground point), yaw (deg),
/// scale; plus residual and prompt.
void write_plan(const AssemblyPlan& plan, const std::filesystem::path& path);
AssemblyPlan read_plan(const std::filesystem::path& path);

}  // namespace advforge
