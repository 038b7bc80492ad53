#include "advforge/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "advforge/rng.hpp"

namespace advforge {

namespace {

// Seed stream labels.
constexpr std::uint64_t kEnvStream = 1;
constexpr std::uint64_t kPlacementStream = 2;
constexpr std::uint64_t kLidarStream = 3;
constexpr std::uint64_t kJitterStream = 4;

std::uint64_t text_key(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

double rate(int k, int n) { return n > 0 ? 100.0 * k / n : 0.0; }

double rate_stderr(int k, int n) {
  if (n <= 0) return 0.0;
  const double p = static_cast<double>(k) / n;
  return 100.0 * std::sqrt(p * (1.0 - p) / n);
}

Environment scene_environment(const HarnessContext& ctx, const std::string& name) {
  return make_environment(name, derive_seed({ctx.seed, kEnvStream, text_key(name)}));
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Trials of one cell, run in parallel into preallocated slots.
template <typename Fn>
std::vector<TrialResult> run_cell(int n_trials, Fn&& one) {
  std::vector<TrialResult> out(static_cast<std::size_t>(std::max(0, n_trials)));
  parallel_for(out.size(), [&](std::size_t t) { out[t] = one(static_cast<std::uint64_t>(t)); });
  return out;
}

void write_preamble(std::ostream& out, std::string_view preamble) {
  while (!preamble.empty()) {
    const auto nl = preamble.find('\n');
    out << "# " << preamble.substr(0, nl) << '\n';
    if (nl == std::string_view::npos) break;
    preamble.remove_prefix(nl + 1);
  }
}

void append(SweepOutput& out, std::vector<TrialResult> trials) {
  if (!trials.empty()) out.cells.push_back(summarize(trials));
  out.trials.insert(out.trials.end(), std::make_move_iterator(trials.begin()), std::make_move_iterator(trials.end()));
}

}  // namespace

double CellSummary::dsr() const { return rate(detected, n); }
double CellSummary::asr() const { return rate(attacked, n); }
double CellSummary::dsr_stderr() const { return rate_stderr(detected, n); }
double CellSummary::asr_stderr() const { return rate_stderr(attacked, n); }

CellSummary summarize(std::span<const TrialResult> trials) {
  CellSummary c;
  if (!trials.empty()) {
    c.scenario = trials.front().scenario;
    c.condition = trials.front().condition;
  }
  for (const auto& t : trials) {
    ++c.n;
    c.detected += t.score.detected ? 1 : 0;
    c.attacked += t.score.attacked ? 1 : 0;
  }
  return c;
}

std::vector<TriangleMesh> build_target(const TargetSpec& target, const TriangleMesh& ped, const Vocabulary& vocab,
                                       const ObjectPool& pool) {
  AttributedTarget at;
  if (target.attributes.empty()) {
    at.mesh = ped;
  } else {
    at = apply_attributes(ped, target.attributes);
  }
  if (target.triplet) {
    TriangleMesh object = generate_object_part(*target.triplet, vocab, pool, ped);
    object.tags.assign(object.triangle_count(), BodyRegion::kNone);
    at.mesh.append(object);
  }
  std::vector<TriangleMesh> meshes{std::move(at.mesh)};
  for (auto& o : at.occluders) meshes.push_back(std::move(o));
  return meshes;
}

TrialResult run_trial(const HarnessContext& ctx, const Environment& env, const TargetSpec& target,
                      const Placement& placement, double velocity, const LidarConfig& lidar,
                      std::uint64_t lidar_seed) {
  const auto meshes = build_target(target, ctx.pedestrian, ctx.vocab, ctx.pool);

  ScenarioConfig sc;
  sc.distance = placement.distance;
  sc.angle_deg = placement.angle_deg;
  const Pose3D pose = place_target(ctx.pedestrian, sc);
  const ComposedScene scene = compose(env, meshes, pose);

  LidarConfig cfg = sector_config(lidar, scene.target_bounds, ctx.sector_margin_deg);
  cfg.seed = lidar_seed;
  const ScanResult s = scan(*scene.bvh, cfg, ScanMotion{velocity, 0});

  TrialResult r;
  r.scenario = env.name;
  r.distance = placement.distance;
  r.angle_deg = placement.angle_deg;
  r.gt_box = target_box(std::span<const TriangleMesh>(&ctx.pedestrian, 1), pose);
  r.detections = detect(s.cloud, ctx.params);
  r.score = score_trial(r.detections, r.gt_box);
  return r;
}

// ---------------------------------------------------------------------------
// Attribute sweep
// ---------------------------------------------------------------------------

TargetSpec attribute_condition(const std::string& name, const AttributeSweepConfig& cfg) {
  TargetSpec t;
  if (name == "clean") return t;
  if (name == "topology" || name == "combination") t.attributes.topology_mask = cfg.topology_mask;
  if (name == "connectivity" || name == "combination") t.attributes.connectivity_gap = cfg.gap;
  if (name == "intensity" || name == "combination") t.attributes.intensity_factor = cfg.intensity_factor;
  if (name == "combination") {
    t.triplet = cfg.combination_triplet;
    return t;
  }
  if (t.attributes.empty()) throw Error(ErrorCode::kInvalidConfig, "unknown attribute condition '" + name + "'");
  return t;
}

SweepOutput run_attribute_sweep(const HarnessContext& ctx, const AttributeSweepConfig& cfg) {
  std::vector<TargetSpec> targets;
  for (const auto& c : cfg.conditions) targets.push_back(attribute_condition(c, cfg));
  SweepOutput out;
  for (const auto& scene : cfg.scenes) {
    const Environment env = scene_environment(ctx, scene);
    for (std::size_t c = 0; c < cfg.conditions.size(); ++c) {
      // Placements and noise depend on (scene, trial) only, so conditions are paired.
      auto trials = run_cell(cfg.n_trials, [&](std::uint64_t t) {
        const auto key = text_key(scene);
        const Placement p =
            sample_placement(env, cfg.range, ctx.lidar.origin, derive_seed({ctx.seed, kPlacementStream, key, t}));
        TrialResult r = run_trial(ctx, env, targets[c], p, 0.0, ctx.lidar, derive_seed({ctx.seed, kLidarStream, key, t}));
        r.condition = cfg.conditions[c];
        r.trial = t;
        return r;
      });
      append(out, std::move(trials));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Environment sweep
// ---------------------------------------------------------------------------

std::string to_string(EnvFactor f) {
  switch (f) {
    case EnvFactor::kDistance: return "distance";
    case EnvFactor::kAngle: return "angle";
    case EnvFactor::kVelocity: return "velocity";
  }
  return "distance";
}

EnvFactor parse_env_factor(const std::string& s) {
  for (auto f : {EnvFactor::kDistance, EnvFactor::kAngle, EnvFactor::kVelocity}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown sweep factor '" + s + "'");
}

SweepOutput run_env_sweep(const HarnessContext& ctx, const EnvSweepConfig& cfg) {
  const Environment env = scene_environment(ctx, cfg.scene);
  SweepOutput out;
  for (double value : cfg.values) {
    auto trials = run_cell(cfg.n_trials, [&](std::uint64_t t) {
      Rng rng(derive_seed({ctx.seed, kJitterStream, t}));
      double distance = cfg.base_distance, angle = cfg.base_angle_deg, velocity = cfg.base_velocity;
      if (cfg.factor == EnvFactor::kDistance) distance = value;
      if (cfg.factor == EnvFactor::kAngle) angle = value;
      if (cfg.factor == EnvFactor::kVelocity) velocity = value;
      Placement p{distance, angle};
      // Jitter until the line of sight is clear; the unjittered value is the fallback.
      for (int attempt = 0; attempt < 100; ++attempt) {
        const Placement q{std::max(1.0, distance + rng.uniform(-cfg.distance_jitter, cfg.distance_jitter)),
                          angle + rng.uniform(-cfg.angle_jitter_deg, cfg.angle_jitter_deg)};
        if (placement_clear(env, q, ctx.lidar.origin)) {
          p = q;
          break;
        }
      }
      TrialResult r = run_trial(ctx, env, cfg.target, p, velocity, ctx.lidar, derive_seed({ctx.seed, kLidarStream, t}));
      r.condition = format_value(value);
      r.trial = t;
      return r;
    });
    append(out, std::move(trials));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Beam sweep
// ---------------------------------------------------------------------------

SweepOutput run_beam_sweep(const HarnessContext& ctx, const BeamSweepConfig& cfg) {
  const Environment env = scene_environment(ctx, cfg.scene);
  SweepOutput out;
  for (int beams : cfg.beams) {
    LidarConfig lidar = ctx.lidar;
    lidar.beams = beams;
    lidar.validate();
    auto trials = run_cell(cfg.n_trials, [&](std::uint64_t t) {
      const Placement p =
          sample_placement(env, cfg.range, lidar.origin, derive_seed({ctx.seed, kPlacementStream, t}));
      TrialResult r = run_trial(ctx, env, cfg.target, p, 0.0, lidar, derive_seed({ctx.seed, kLidarStream, t}));
      r.condition = std::to_string(beams);
      r.trial = t;
      return r;
    });
    append(out, std::move(trials));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Occlusion study
// ---------------------------------------------------------------------------

SweepOutput run_occlusion_study(const HarnessContext& ctx, const OcclusionConfig& cfg) {
  SweepOutput out;
  for (const auto& scene : cfg.scenes) {
    const Environment env = scene_environment(ctx, scene);
    for (BodyRegion region : cfg.regions) {
      TargetSpec target;
      target.attributes.occluder = region;
      auto trials = run_cell(cfg.n_trials, [&](std::uint64_t t) {
        const auto key = text_key(scene);
        const Placement p =
            sample_placement(env, cfg.range, ctx.lidar.origin, derive_seed({ctx.seed, kPlacementStream, key, t}));
        TrialResult r = run_trial(ctx, env, target, p, 0.0, ctx.lidar, derive_seed({ctx.seed, kLidarStream, key, t}));
        r.condition = std::string(to_string(region));
        r.trial = t;
        return r;
      });
      append(out, std::move(trials));
    }
  }
  return out;
}

std::vector<OcclusionRow> occlusion_table(const SweepOutput& out, std::span<const BodyRegion> regions) {
  std::vector<OcclusionRow> rows;
  for (BodyRegion region : regions) {
    OcclusionRow row;
    row.region = std::string(to_string(region));
    for (const auto& c : out.cells) {
      if (c.condition == row.region) row.per_scene.push_back(c);
    }
    if (!row.per_scene.empty()) {
      double sum = 0.0;
      for (const auto& c : row.per_scene) sum += c.asr();
      row.mean_asr = sum / static_cast<double>(row.per_scene.size());
      double var = 0.0;
      for (const auto& c : row.per_scene) var += (c.asr() - row.mean_asr) * (c.asr() - row.mean_asr);
      row.std_asr = std::sqrt(var / static_cast<double>(row.per_scene.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

std::string format_rate(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", percent);
  return buf;
}

void write_cells_csv(std::span<const CellSummary> cells, const std::filesystem::path& path, std::string_view preamble) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_preamble(out, preamble);
  out << "scenario,condition,n,detected,attacked,dsr,dsr_stderr,asr,asr_stderr\n";
  for (const auto& c : cells) {
    out << c.scenario << ',' << c.condition << ',' << c.n << ',' << c.detected << ',' << c.attacked << ','
        << format_rate(c.dsr()) << ',' << format_rate(c.dsr_stderr()) << ',' << format_rate(c.asr()) << ','
        << format_rate(c.asr_stderr()) << '\n';
  }
}

void write_plotdata_csv(std::span<const TrialResult> trials, const std::filesystem::path& path,
                        std::string_view preamble) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_preamble(out, preamble);
  out << "scenario,condition,trial,distance,angle_deg,detections,max_iou,detected,attacked\n";
  char buf[64];
  for (const auto& t : trials) {
    out << t.scenario << ',' << t.condition << ',' << t.trial << ',';
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", t.distance, t.angle_deg);
    out << buf << ',' << t.detections.size() << ',';
    std::snprintf(buf, sizeof buf, "%.4f", t.score.max_iou);
    out << buf << ',' << (t.score.detected ? 1 : 0) << ',' << (t.score.attacked ? 1 : 0) << '\n';
  }
}

}  // namespace advforge
