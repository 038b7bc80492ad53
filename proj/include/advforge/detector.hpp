#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advforge/geometry.hpp"
#include "advforge/lidar.hpp"

namespace advforge {

// ============================================================================
// BEV features
// ============================================================================

struct BevSpec {
  double x_min = 0.0, x_max = 50.0;
  double y_min = -25.0, y_max = 25.0;
  double cell = 0.25;
  // Points outside [z_min, z_max] (ground returns, overhangs) are ignored.
  double z_min = 0.05, z_max = 3.5;
  double height_temperature = 0.1;

  int nx() const { return static_cast<int>(std::lround((x_max - x_min) / cell)); }
  int ny() const { return static_cast<int>(std::lround((y_max - y_min) / cell)); }
  /// Linear cell index (ix * ny + iy) or -1 when the point is ignored.
  std::int32_t cell_of(const Vec3& p) const;
  Vec2 cell_center(int ix, int iy) const {
    return Vec2(x_min + (ix + 0.5) * cell, y_min + (iy + 0.5) * cell);
  }
};

enum FeatureChannel : int { kCount = 0, kHeight, kIntensity, kOffsetX, kOffsetY, kFeatureChannels };

/// Sparse BEV grid: only cells that received at least one point are stored.
/// Channels: weighted count, soft-max height, weighted mean intensity and the
/// weighted mean offset of the points from the cell centre.
struct BevFeatures {
  BevSpec spec;
  std::vector<std::int32_t> cells;  // sorted linear indices
  std::vector<std::array<double, kFeatureChannels>> values;

  /// Dense accessor; cells without points read as zero.
  double at(int ix, int iy, int channel) const;
};

BevFeatures featurize(const PointCloud& cloud, const BevSpec& spec = {});

// ============================================================================
// Network
// ============================================================================

/// Fixed topology: 3x3 conv (5 -> 8, ReLU), 3x3 conv (8 -> 16, ReLU), 1x1 head
/// (16 -> 8: objectness logit, dx, dy, dz, log l, log w, log h, yaw).
struct DetectorParams {
  static constexpr int kIn = kFeatureChannels;
  static constexpr int kC1 = 8;
  static constexpr int kC2 = 16;
  static constexpr int kOut = 8;
  static constexpr std::size_t kW1 = kC1 * kIn * 9;
  static constexpr std::size_t kB1 = kC1;
  static constexpr std::size_t kW2 = kC2 * kC1 * 9;
  static constexpr std::size_t kB2 = kC2;
  static constexpr std::size_t kWh = kOut * kC2;
  static constexpr std::size_t kBh = kOut;
  static constexpr std::size_t kTotal = kW1 + kB1 + kW2 + kB2 + kWh + kBh;

  std::vector<double> values = std::vector<double>(kTotal, 0.0);

  // Tensor views, in file order.
  const double* w1() const { return values.data(); }
  const double* b1() const { return w1() + kW1; }
  const double* w2() const { return b1() + kB1; }
  const double* b2() const { return w2() + kW2; }
  const double* wh() const { return b2() + kB2; }
  const double* bh() const { return wh() + kWh; }

  static std::uint64_t topology_hash();
  /// He-style initialisation with the objectness bias set for a 1% prior.
  static DetectorParams initial(std::uint64_t seed);

  bool finite() const;
  /// Rounds every value through float32, the storage precision.
  void round_to_float();
};

/// Prior box for the regression head.
inline constexpr double kAnchorLength = 0.3;
inline constexpr double kAnchorWidth = 0.6;
inline constexpr double kAnchorHeight = 1.75;
inline constexpr double kAnchorCenterZ = 0.9;

struct Detection {
  Box3D box;
  double confidence = 0.0;
  std::int32_t cell = -1;  // linear index of the emitting cell
};

inline constexpr double kDefaultConfThreshold = 0.5;
inline constexpr double kNmsIou = 0.3;

/// Every cell with confidence >= min_conf, before suppression, ordered by
/// confidence (descending) then cell index.
std::vector<Detection> candidates(const PointCloud& cloud, const DetectorParams& params, double min_conf,
                                  const BevSpec& spec = {});

/// Greedy BEV non-maximum suppression over an already sorted list.
std::vector<Detection> nms(std::span<const Detection> sorted, double iou_threshold = kNmsIou);

std::vector<Detection> detect(const PointCloud& cloud, const DetectorParams& params,
                              double conf_threshold = kDefaultConfThreshold, const BevSpec& spec = {});

struct ConfidenceGradient {
  double confidence = 0.0;      // max (matched) confidence
  bool matched = false;         // some cell passed the IoU gate
  std::int32_t cell = -1;       // the maximising cell
  std::vector<double> d_weight; // per input point
};

/// d(max confidence)/d(point weights). With a gt box only cells whose decoded
/// box has 3D IoU > iou_gate compete; when none does, `matched` is false and
/// the gradient is zero. Without a gt every grid cell competes.
ConfidenceGradient confidence_gradient(const PointCloud& cloud, const DetectorParams& params,
                                       const std::optional<Box3D>& gt = std::nullopt, double iou_gate = 0.5,
                                       const BevSpec& spec = {});

using FeatureVector = std::array<double, kFeatureChannels>;

struct FeatureGradient {
  double confidence = 0.0;
  bool matched = false;
  std::int32_t cell = -1;
  std::vector<FeatureVector> d_features;  // aligned with BevFeatures::cells
};

/// Same selection rule as confidence_gradient, differentiated with respect to
/// the feature channels of every stored cell.
FeatureGradient feature_confidence_gradient(const BevFeatures& features, const DetectorParams& params,
                                            const std::optional<Box3D>& gt = std::nullopt, double iou_gate = 0.5);

/// Features of `fixed` (weight as given) superposed with K component clouds
/// whose point weights are scaled by a per-component factor. Every channel is
/// a ratio of sums that are linear in the factors, so features and their
/// weight gradients are evaluated from per-cell moments without re-binning.
class BevMixture {
 public:
  BevMixture(const PointCloud& fixed, std::span<const PointCloud> components, const BevSpec& spec = {});

  std::size_t component_count() const noexcept { return component_cells_.size(); }
  const std::vector<std::int32_t>& cells() const noexcept { return cells_; }

  BevFeatures features(std::span<const double> factors) const;
  /// Chains d(loss)/d(features) (aligned with cells()) to d(loss)/d(factors).
  std::vector<double> factor_gradient(std::span<const double> factors, std::span<const FeatureVector> d_features) const;

 private:
  using Moments = std::array<double, 6>;  // w, w*i, w*dx, w*dy, s0, s1
  std::vector<Moments> moments(std::span<const double> factors) const;

  BevSpec spec_;
  std::vector<std::int32_t> cells_;
  std::vector<Moments> fixed_;
  std::vector<std::vector<std::pair<std::uint32_t, Moments>>> component_cells_;
};

// ============================================================================
// Training
// ============================================================================

struct TrainingScene {
  PointCloud cloud;
  std::optional<Box3D> gt;
};

/// Source of labelled scenes; both calls must be pure functions of index.
class SceneSampler {
 public:
  virtual ~SceneSampler() = default;
  virtual TrainingScene sample(std::uint64_t index) const = 0;
  /// Clean pedestrian scenes for the held-out detection rate.
  virtual TrainingScene held_out(std::uint64_t index) const = 0;
};

struct TrainHyper {
  std::uint64_t seed = 0;
  int epochs = 30;
  int batch = 16;
  double learning_rate = 1e-3;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double regression_weight = 2.0;
  int held_out_scenes = 200;
};

struct TrainResult {
  DetectorParams params;
  double held_out_dsr = 0.0;  // percent
  int held_out_n = 0;
  std::vector<double> epoch_loss;
};

/// Throws Error(kNoPositiveScenes) and Error(kDivergedTraining).
TrainResult train(const SceneSampler& sampler, int n_scenes, const TrainHyper& hyper, const BevSpec& spec = {});

/// Loss for one scene; exposed for gradient checks. The parameter gradient is
/// added to `grad`, which is zero-filled first unless it already has kTotal entries.
double scene_loss(const BevFeatures& features, const std::optional<Box3D>& gt, const DetectorParams& params,
                  const TrainHyper& hyper, std::vector<double>* grad);

// ============================================================================
// Params I/O
// ============================================================================

struct ParamsMetadata {
  std::uint64_t seed = 0;
  TrainHyper hyper;
  int n_scenes = 0;
  double held_out_dsr = 0.0;
  int held_out_n = 0;
};

/// Binary: "ADVFDET1", u32 version, u64 topology hash, u32 tensor count, then
/// per tensor u32 element count and little-endian float32 values. Metadata
/// goes to a JSON file next to it (path + ".json").
void save_params(const DetectorParams& params, const ParamsMetadata& meta, const std::filesystem::path& path);
DetectorParams load_params(const std::filesystem::path& path, ParamsMetadata* meta = nullptr);

}  // namespace advforge
