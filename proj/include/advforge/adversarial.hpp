#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advforge/detector.hpp"
#include "advforge/metrics.hpp"
#include "advforge/rng.hpp"
#include "advforge/scene.hpp"
#include "advforge/vop.hpp"

namespace advforge {

inline constexpr double kDefaultIouGate = 0.5;
inline constexpr double kDefaultLossFloor = 0.1;

/// max(eta, max confidence among detections whose 3D IoU with gt exceeds delta).
double adv_loss(std::span<const Detection> dets, const Box3D& gt, double delta = kDefaultIouGate,
                double eta = kDefaultLossFloor);

// ============================================================================
// Gumbel-Softmax
// ============================================================================

std::vector<double> gumbel_noise(std::size_t n, Rng& rng);

/// softmax((logits + noise) / tau). Throws Error(kNonPositiveTemperature).
std::vector<double> gumbel_softmax(std::span<const double> logits, double tau, std::span<const double> noise);
std::vector<double> gumbel_softmax(std::span<const double> logits, double tau, Rng& rng);

/// Pulls d(loss)/d(output) of gumbel_softmax back to its logits.
std::vector<double> gumbel_softmax_backward(std::span<const double> y, std::span<const double> dy, double tau);

enum Component : int { kVerb = 0, kObject = 1, kPose = 2 };

struct MixtureLogits {
  std::array<std::vector<double>, 3> logits;  // verb, object, pose
  double temperature = 1.0;

  static MixtureLogits zeros(const Vocabulary& v);
  /// Throws Error(kNonPositiveTemperature) or Error(kInvalidConfig).
  void validate() const;
};

/// One Gumbel draw per logit, drawn verb, object, pose in order.
using MixtureNoise = std::array<std::vector<double>, 3>;
MixtureNoise draw_mixture_noise(const MixtureLogits& ml, Rng& rng);

struct TripletWeights {
  std::vector<double> w;                        // enumerate_triplets order
  std::array<std::vector<double>, 3> component; // the factors of w
};

/// Outer product of three distributions, renormalised.
TripletWeights product_weights(std::array<std::vector<double>, 3> component);
TripletWeights triplet_weights(const MixtureLogits& ml, Rng& rng);

// ============================================================================
// Render cache
// ============================================================================

/// Everything needed to evaluate any triplet of a vocabulary in one scenario.
/// Rays outside a window around all compositions never see a target, so they
/// come from one background scan; the rays inside are scanned once per
/// triplet. outside + window(i) is exactly the full scan of triplet i.
class RenderCache {
 public:
  RenderCache(Vocabulary vocab, ObjectPool pool, ScenarioConfig scenario, TriangleMesh pedestrian);

  const Vocabulary& vocab() const noexcept { return vocab_; }
  const ObjectPool& pool() const noexcept { return pool_; }
  const ScenarioConfig& scenario() const noexcept { return scenario_; }
  const TriangleMesh& pedestrian() const noexcept { return pedestrian_; }
  const Pose3D& pose() const noexcept { return pose_; }
  const Box3D& gt() const noexcept { return gt_; }
  std::size_t size() const noexcept { return windows_.size(); }

  const PointCloud& outside() const noexcept { return outside_; }
  const PointCloud& window(std::size_t i) const { return windows_.at(i); }
  const BevMixture& mixture() const noexcept { return *mixture_; }

  /// Full scan of triplet i, assembled from the cache.
  PointCloud hard_cloud(std::size_t i) const;

 private:
  Vocabulary vocab_;
  ObjectPool pool_;
  ScenarioConfig scenario_;
  TriangleMesh pedestrian_;
  Pose3D pose_;
  Box3D gt_;
  PointCloud outside_;
  std::vector<PointCloud> windows_;
  std::optional<BevMixture> mixture_;
};

/// Lidar used for every attack render: the scenario's lidar restricted to a
/// sector around the placed pedestrian with room for any carried object.
LidarConfig attack_lidar(const ScenarioConfig& scenario, const TriangleMesh& pedestrian);

/// Fresh scan of one composition in the scenario (frame 0).
PointCloud render_triplet(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                          const ScenarioConfig& scenario, const TriangleMesh& pedestrian);

// ============================================================================
// Losses
// ============================================================================

struct LossSettings {
  double delta = kDefaultIouGate;
  double eta = kDefaultLossFloor;
  bool straight_through = false;
  /// Components pinned to one entry (ablation modes); they get no gradient.
  std::array<std::optional<std::size_t>, 3> fixed;
};

struct SoftLoss {
  double loss = 0.0;
  bool matched = false;  // some cell passed the IoU gate
  TripletWeights weights;
  std::array<std::vector<double>, 3> gradient;  // d loss / d logits
};

/// Loss of the weighted superposition: points outside the window with weight
/// one, each triplet's window points scaled by w[i]. Throws Error(kEmptyCache).
SoftLoss soft_scene_loss(const MixtureLogits& ml, const RenderCache& cache, const DetectorParams& params,
                         const MixtureNoise& noise, const LossSettings& settings = {});
SoftLoss soft_scene_loss(const MixtureLogits& ml, const RenderCache& cache, const DetectorParams& params, Rng& rng,
                         const LossSettings& settings = {});

/// adv_loss over every pre-suppression candidate of the cloud.
double hard_loss(const PointCloud& cloud, const Box3D& gt, const DetectorParams& params,
                 double delta = kDefaultIouGate, double eta = kDefaultLossFloor);

// ============================================================================
// Optimisation
// ============================================================================

enum class AblationMode { kRandom, kVerbOnly, kVerbObject, kFull };
std::string to_string(AblationMode mode);
/// Throws Error(kInvalidConfig).
AblationMode parse_ablation_mode(const std::string& name);

struct AttackHyper {
  std::uint64_t seed = 0;
  int steps = 300;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double tau_start = 1.0;
  double tau_end = 0.1;
  double delta = kDefaultIouGate;
  double eta = kDefaultLossFloor;
  bool straight_through = false;
  AblationMode mode = AblationMode::kFull;

  /// Throws Error(kInvalidConfig) / Error(kNonPositiveTemperature).
  void validate() const;
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double tau = 0.0;
  VopTriplet argmax;  // per-component argmax of this step's relaxed sample
};

struct AttackTrace {
  AttackHyper hyper;
  std::vector<StepRecord> steps;
  MixtureLogits final_logits;
  VopTriplet triplet;
  std::string prompt;
  double hard_loss = 0.0;
  std::vector<Detection> detections;
  Box3D gt_box;
  TrialScore score;
};

/// Zero-initialised logits, Adam on the soft loss with geometric temperature
/// annealing, then a hard re-render of the per-component argmax.
AttackTrace optimize(const RenderCache& cache, const DetectorParams& params, const AttackHyper& hyper);
AttackTrace optimize(const Vocabulary& v, const ObjectPool& pool, const ScenarioConfig& scenario,
                     const DetectorParams& params, const AttackHyper& hyper);

struct ExhaustiveResult {
  VopTriplet best;
  std::vector<double> losses;  // enumerate_triplets order
};

inline constexpr std::size_t kMaxExhaustive = 10000;

/// Hard loss of every triplet; lowest wins, lexicographically first on ties.
ExhaustiveResult exhaustive_search(const RenderCache& cache, const DetectorParams& params,
                                   double delta = kDefaultIouGate, double eta = kDefaultLossFloor);
/// Throws Error(kSpaceTooLarge) when the vocabulary exceeds 10000 triplets.
ExhaustiveResult exhaustive_search(const Vocabulary& v, const ObjectPool& pool, const ScenarioConfig& scenario,
                                   const DetectorParams& params);

// ============================================================================
// Trace I/O
// ============================================================================

/// One JSON object per step, then a summary JSON document.
void write_trace(const AttackTrace& trace, const Vocabulary& v, const std::filesystem::path& steps_jsonl,
                 const std::filesystem::path& summary_json);

}  // namespace advforge
