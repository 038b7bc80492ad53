#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "advforge/detector.hpp"
#include "advforge/metrics.hpp"
#include "advforge/scene.hpp"
#include "advforge/vop.hpp"

namespace advforge {

struct TrialResult {
  std::string scenario;   // environment name
  std::string condition;  // condition label or swept value
  std::uint64_t trial = 0;
  double distance = 0.0;
  double angle_deg = 0.0;
  std::vector<Detection> detections;
  Box3D gt_box;
  TrialScore score;
};

/// One aggregated cell: exact counts plus rates in percent.
struct CellSummary {
  std::string scenario;
  std::string condition;
  int n = 0;
  int detected = 0;
  int attacked = 0;

  double dsr() const;
  double asr() const;
  double dsr_stderr() const;
  double asr_stderr() const;
};

CellSummary summarize(std::span<const TrialResult> trials);

/// What is placed in front of the sensor for one trial.
struct TargetSpec {
  AttributeSpec attributes;
  std::optional<VopTriplet> triplet;  // carried object from the composition generator
};

struct HarnessContext {
  std::uint64_t seed = 0;
  LidarConfig lidar;
  DetectorParams params;
  ObjectPool pool;
  Vocabulary vocab;
  TriangleMesh pedestrian;
  double sector_margin_deg = 10.0;
};

/// Target meshes in the template frame: the (edited) pedestrian with any
/// carried object appended, followed by occluders.
std::vector<TriangleMesh> build_target(const TargetSpec& target, const TriangleMesh& ped, const Vocabulary& vocab,
                                       const ObjectPool& pool);

/// Renders, detects and scores one target. The ground truth is always the
/// clean pedestrian's box at the placement.
TrialResult run_trial(const HarnessContext& ctx, const Environment& env, const TargetSpec& target,
                      const Placement& placement, double velocity, const LidarConfig& lidar,
                      std::uint64_t lidar_seed);

// ============================================================================
// Sweeps
// ============================================================================

struct SweepOutput {
  std::vector<CellSummary> cells;
  std::vector<TrialResult> trials;  // every trial, cell order then trial index
};

struct AttributeSweepConfig {
  std::vector<std::string> conditions{"clean", "topology", "connectivity", "intensity", "combination"};
  std::vector<std::string> scenes{"open_lot", "street", "corridor"};
  int n_trials = 200;
  PlacementRange range{5.0, 30.0, 45.0, 24.0};
  std::vector<BodyRegion> topology_mask{BodyRegion::kArms};
  ConnectivityGap gap;
  double intensity_factor = 0.2;
  /// The combination condition applies all three edits and adds this object.
  std::optional<VopTriplet> combination_triplet;
};

/// Named condition -> target. Throws Error(kInvalidConfig) for unknown names.
TargetSpec attribute_condition(const std::string& name, const AttributeSweepConfig& cfg);

SweepOutput run_attribute_sweep(const HarnessContext& ctx, const AttributeSweepConfig& cfg);

enum class EnvFactor { kDistance, kAngle, kVelocity };
std::string to_string(EnvFactor f);
EnvFactor parse_env_factor(const std::string& s);

struct EnvSweepConfig {
  EnvFactor factor = EnvFactor::kDistance;
  std::vector<double> values{5.0, 10.0, 20.0, 30.0, 40.0};
  std::string scene = "open_lot";
  int n_trials = 200;
  double base_distance = 15.0;
  double base_angle_deg = 0.0;
  double base_velocity = 0.0;
  /// Per-trial jitter keeps trials distinct without changing the swept factor.
  double distance_jitter = 0.5;
  double angle_jitter_deg = 3.0;
  TargetSpec target;
};

SweepOutput run_env_sweep(const HarnessContext& ctx, const EnvSweepConfig& cfg);

struct BeamSweepConfig {
  std::vector<int> beams{32, 64, 128};
  std::string scene = "open_lot";
  int n_trials = 200;
  PlacementRange range{5.0, 30.0, 45.0, 24.0};
  TargetSpec target;
};

SweepOutput run_beam_sweep(const HarnessContext& ctx, const BeamSweepConfig& cfg);

struct OcclusionConfig {
  std::vector<BodyRegion> regions{BodyRegion::kFeet, BodyRegion::kTorso, BodyRegion::kHead};
  std::vector<std::string> scenes{"open_lot", "street", "corridor"};
  int n_trials = 200;
  PlacementRange range{5.0, 30.0, 45.0, 24.0};
};

struct OcclusionRow {
  std::string region;
  std::vector<CellSummary> per_scene;
  double mean_asr = 0.0;
  double std_asr = 0.0;  // across scenes
};

SweepOutput run_occlusion_study(const HarnessContext& ctx, const OcclusionConfig& cfg);
std::vector<OcclusionRow> occlusion_table(const SweepOutput& out, std::span<const BodyRegion> regions);

// ============================================================================
// Output
// ============================================================================

/// scenario,condition,n,detected,attacked,dsr,dsr_stderr,asr,asr_stderr.
/// Each line of `preamble` is written first as a '#' comment.
void write_cells_csv(std::span<const CellSummary> cells, const std::filesystem::path& path,
                     std::string_view preamble = {});
/// One row per trial, for external plotting.
void write_plotdata_csv(std::span<const TrialResult> trials, const std::filesystem::path& path,
                        std::string_view preamble = {});

/// Rate formatted with one decimal.
std::string format_rate(double percent);

}  // namespace advforge
