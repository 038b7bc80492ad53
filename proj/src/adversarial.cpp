#include "advforge/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "advforge/error.hpp"
#include "advforge/parallel.hpp"
#include "json.hpp"

namespace advforge {

namespace {

// Seed stream labels.
constexpr std::uint64_t kStepStream = 0x5354455053ULL;
constexpr std::uint64_t kFinalStream = 0x46494e414cULL;
constexpr std::uint64_t kModeStream = 0x4d4f4445ULL;

// Room around the pedestrian for carried, pushed or dragged objects.
constexpr double kAttackSectorReach = 2.0;

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::array<std::size_t, 3> vocab_sizes(const Vocabulary& v) {
  return {v.verbs.size(), v.objects.size(), v.poses.size()};
}

Box3D inflate(const Box3D& b, double r) {
  Box3D out = b;
  out.size += Vec3::Constant(2.0 * r);
  return out;
}

Box3D union_aabb(const Box3D& a, const Box3D& b) {
  // Both boxes are axis aligned.
  const Vec3 lo = (a.center - 0.5 * a.size).cwiseMin(b.center - 0.5 * b.size);
  const Vec3 hi = (a.center + 0.5 * a.size).cwiseMax(b.center + 0.5 * b.size);
  Box3D out;
  out.center = 0.5 * (lo + hi);
  out.size = hi - lo;
  return out;
}

ScanMotion attack_motion(const ScenarioConfig& s) { return ScanMotion{s.velocity, 0}; }

}  // namespace

double adv_loss(std::span<const Detection> dets, const Box3D& gt, double delta, double eta) {
  double best = eta;
  for (const auto& d : dets) {
    if (d.confidence > best && iou3d(d.box, gt) > delta) best = d.confidence;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax
// ---------------------------------------------------------------------------

std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
  std::vector<double> g(n);
  for (auto& x : g) x = rng.gumbel();
  return g;
}

std::vector<double> gumbel_softmax(std::span<const double> logits, double tau, std::span<const double> noise) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "temperature must be positive");
  if (noise.size() != logits.size()) throw Error(ErrorCode::kIndexOutOfRange, "noise size does not match logits");
  std::vector<double> y(logits.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = (logits[i] + noise[i]) / tau;
    hi = std::max(hi, y[i]);
  }
  double sum = 0.0;
  for (auto& v : y) sum += (v = std::exp(v - hi));
  for (auto& v : y) v /= sum;
  return y;
}

std::vector<double> gumbel_softmax(std::span<const double> logits, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "temperature must be positive");
  const auto g = gumbel_noise(logits.size(), rng);
  return gumbel_softmax(logits, tau, g);
}

std::vector<double> gumbel_softmax_backward(std::span<const double> y, std::span<const double> dy, double tau) {
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  std::vector<double> d(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = y[i] * (dy[i] - dot) / tau;
  return d;
}

MixtureLogits MixtureLogits::zeros(const Vocabulary& v) {
  MixtureLogits ml;
  const auto n = vocab_sizes(v);
  for (int c = 0; c < 3; ++c) ml.logits[c].assign(n[c], 0.0);
  return ml;
}

void MixtureLogits::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kNonPositiveTemperature, "temperature must be positive");
  for (const auto& l : logits) {
    if (l.empty()) throw Error(ErrorCode::kInvalidConfig, "empty logit vector");
    for (double x : l) {
      if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidConfig, "non-finite logit");
    }
  }
}

MixtureNoise draw_mixture_noise(const MixtureLogits& ml, Rng& rng) {
  MixtureNoise n;
  for (int c = 0; c < 3; ++c) n[c] = gumbel_noise(ml.logits[c].size(), rng);
  return n;
}

TripletWeights product_weights(std::array<std::vector<double>, 3> component) {
  TripletWeights tw;
  const auto& [pv, po, pp] = component;
  tw.w.reserve(pv.size() * po.size() * pp.size());
  double sum = 0.0;
  for (double a : pv) {
    for (double b : po) {
      for (double c : pp) {
        tw.w.push_back(a * b * c);
        sum += tw.w.back();
      }
    }
  }
  if (sum > 0.0) {
    for (auto& x : tw.w) x /= sum;
  }
  tw.component = std::move(component);
  return tw;
}

TripletWeights triplet_weights(const MixtureLogits& ml, Rng& rng) {
  ml.validate();
  const auto noise = draw_mixture_noise(ml, rng);
  std::array<std::vector<double>, 3> comp;
  for (int c = 0; c < 3; ++c) comp[c] = gumbel_softmax(ml.logits[c], ml.temperature, noise[c]);
  return product_weights(std::move(comp));
}

// ---------------------------------------------------------------------------
// Render cache
// ---------------------------------------------------------------------------

LidarConfig attack_lidar(const ScenarioConfig& scenario, const TriangleMesh& pedestrian) {
  const Pose3D pose = place_target(pedestrian, scenario);
  const Box3D bounds = inflate(mesh_aabb(transform_mesh(pedestrian, pose)), kAttackSectorReach);
  return sector_config(scenario.lidar, bounds);
}

PointCloud render_triplet(const VopTriplet& t, const Vocabulary& v, const ObjectPool& pool,
                          const ScenarioConfig& scenario, const TriangleMesh& pedestrian) {
  const std::vector<TriangleMesh> targets{generate_composition(t, v, pool, pedestrian)};
  const ComposedScene scene = compose(scenario.env, targets, place_target(pedestrian, scenario));
  return scan(*scene.bvh, attack_lidar(scenario, pedestrian), attack_motion(scenario)).cloud;
}

RenderCache::RenderCache(Vocabulary vocab, ObjectPool pool, ScenarioConfig scenario, TriangleMesh pedestrian)
    : vocab_(std::move(vocab)), pool_(std::move(pool)), scenario_(std::move(scenario)),
      pedestrian_(std::move(pedestrian)) {
  vocab_.validate();
  scenario_.validate();
  if (vocab_.size() > kMaxExhaustive) {
    throw Error(ErrorCode::kSpaceTooLarge, "vocabulary has more than 10000 triplets");
  }
  const auto triplets = enumerate_triplets(vocab_);
  pose_ = place_target(pedestrian_, scenario_);
  gt_ = target_box(std::span<const TriangleMesh>(&pedestrian_, 1), pose_);
  const LidarConfig lidar = attack_lidar(scenario_, pedestrian_);
  const ScanMotion motion = attack_motion(scenario_);

  std::vector<TriangleMesh> comps(triplets.size());
  std::vector<Box3D> bounds(triplets.size());
  parallel_for(triplets.size(), [&](std::size_t i) {
    comps[i] = generate_composition(triplets[i], vocab_, pool_, pedestrian_);
    bounds[i] = mesh_aabb(transform_mesh(comps[i], pose_));
  });
  Box3D all = bounds.front();
  for (const auto& b : bounds) all = union_aabb(all, b);
  const RayWindow window = RayWindow::around(all, lidar);

  const Bvh background(scenario_.env.static_meshes);
  const ScanResult bg = scan(background, lidar, motion);
  for (std::size_t k = 0; k < bg.cloud.size(); ++k) {
    const auto id = bg.ray_ids[k];
    const int column = static_cast<int>(id / static_cast<std::uint32_t>(lidar.beams));
    const int beam = static_cast<int>(id % static_cast<std::uint32_t>(lidar.beams));
    if (!window.contains(lidar, column, beam)) outside_.points.push_back(bg.cloud.points[k]);
  }

  windows_.resize(triplets.size());
  parallel_for(triplets.size(), [&](std::size_t i) {
    const ComposedScene scene = compose(scenario_.env, std::span<const TriangleMesh>(&comps[i], 1), pose_);
    windows_[i] = scan(*scene.bvh, lidar, motion, &window).cloud;
  });
  mixture_.emplace(outside_, windows_);
}

PointCloud RenderCache::hard_cloud(std::size_t i) const {
  PointCloud c = outside_;
  const auto& w = windows_.at(i).points;
  c.points.insert(c.points.end(), w.begin(), w.end());
  return c;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double hard_loss(const PointCloud& cloud, const Box3D& gt, const DetectorParams& params, double delta, double eta) {
  const auto cands = candidates(cloud, params, eta);
  return adv_loss(cands, gt, delta, eta);
}

SoftLoss soft_scene_loss(const MixtureLogits& ml, const RenderCache& cache, const DetectorParams& params,
                         const MixtureNoise& noise, const LossSettings& settings) {
  if (cache.size() == 0) throw Error(ErrorCode::kEmptyCache, "render cache holds no triplets");
  ml.validate();
  const auto n = vocab_sizes(cache.vocab());
  for (int c = 0; c < 3; ++c) {
    if (ml.logits[c].size() != n[c] || noise[c].size() != n[c]) {
      throw Error(ErrorCode::kIndexOutOfRange, "logit sizes do not match the cached vocabulary");
    }
  }

  // Relaxed (soft) and forward (possibly hard) component distributions.
  std::array<std::vector<double>, 3> soft, forward;
  for (int c = 0; c < 3; ++c) {
    if (settings.fixed[c]) {
      soft[c].assign(n[c], 0.0);
      soft[c].at(*settings.fixed[c]) = 1.0;
      forward[c] = soft[c];
      continue;
    }
    soft[c] = gumbel_softmax(ml.logits[c], ml.temperature, noise[c]);
    forward[c] = soft[c];
    if (settings.straight_through) {
      const std::size_t k = argmax(soft[c]);
      std::fill(forward[c].begin(), forward[c].end(), 0.0);
      forward[c][k] = 1.0;
    }
  }

  SoftLoss out;
  out.weights = product_weights(forward);
  for (int c = 0; c < 3; ++c) out.gradient[c].assign(n[c], 0.0);

  const BevMixture& mix = cache.mixture();
  const BevFeatures features = mix.features(out.weights.w);
  const FeatureGradient fg = feature_confidence_gradient(features, params, cache.gt(), settings.delta);
  out.matched = fg.matched;
  if (!fg.matched || !(fg.confidence > settings.eta)) {
    out.loss = settings.eta;
    return out;
  }
  out.loss = fg.confidence;

  // d loss / d w, then through the renormalised outer product.
  const std::vector<double> dw = mix.factor_gradient(out.weights.w, fg.d_features);
  const auto& [pv, po, pp] = forward;
  double sum = 0.0, dot = 0.0;
  for (std::size_t t = 0; t < dw.size(); ++t) dot += dw[t] * out.weights.w[t];
  {
    double a = 0.0, b = 0.0, c = 0.0;
    for (double x : pv) a += x;
    for (double x : po) b += x;
    for (double x : pp) c += x;
    sum = a * b * c;
  }
  std::array<std::vector<double>, 3> dp{std::vector<double>(n[0], 0.0), std::vector<double>(n[1], 0.0),
                                        std::vector<double>(n[2], 0.0)};
  std::size_t t = 0;
  for (std::size_t a = 0; a < n[0]; ++a) {
    for (std::size_t b = 0; b < n[1]; ++b) {
      for (std::size_t c = 0; c < n[2]; ++c, ++t) {
        const double du = (dw[t] - dot) / sum;
        dp[0][a] += du * po[b] * pp[c];
        dp[1][b] += du * pv[a] * pp[c];
        dp[2][c] += du * pv[a] * po[b];
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    if (settings.fixed[c]) continue;
    out.gradient[c] = gumbel_softmax_backward(soft[c], dp[c], ml.temperature);
  }
  return out;
}

SoftLoss soft_scene_loss(const MixtureLogits& ml, const RenderCache& cache, const DetectorParams& params, Rng& rng,
                         const LossSettings& settings) {
  const auto noise = draw_mixture_noise(ml, rng);
  return soft_scene_loss(ml, cache, params, noise, settings);
}

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kRandom: return "random";
    case AblationMode::kVerbOnly: return "verb_only";
    case AblationMode::kVerbObject: return "verb_object";
    case AblationMode::kFull: return "full";
  }
  return "full";
}

AblationMode parse_ablation_mode(const std::string& name) {
  for (auto m : {AblationMode::kRandom, AblationMode::kVerbOnly, AblationMode::kVerbObject, AblationMode::kFull}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown attack mode '" + name + "'");
}

void AttackHyper::validate() const {
  if (steps < 0) throw Error(ErrorCode::kInvalidConfig, "steps must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidConfig, "learning_rate must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "moment decays must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw Error(ErrorCode::kInvalidConfig, "adam_epsilon must be positive");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) {
    throw Error(ErrorCode::kNonPositiveTemperature, "temperatures must be positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw Error(ErrorCode::kInvalidConfig, "delta must lie in (0, 1)");
  if (!(eta >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "eta must be >= 0");
}

AttackTrace optimize(const RenderCache& cache, const DetectorParams& params, const AttackHyper& hyper) {
  hyper.validate();
  const Vocabulary& vocab = cache.vocab();
  const auto n = vocab_sizes(vocab);

  AttackTrace trace;
  trace.hyper = hyper;
  MixtureLogits ml = MixtureLogits::zeros(vocab);

  LossSettings settings;
  settings.delta = hyper.delta;
  settings.eta = hyper.eta;
  settings.straight_through = hyper.straight_through;
  {
    Rng mode_rng(derive_seed({hyper.seed, kModeStream}));
    std::array<std::size_t, 3> draw{};
    for (int c = 0; c < 3; ++c) draw[c] = static_cast<std::size_t>(mode_rng.below(n[c]));
    switch (hyper.mode) {
      case AblationMode::kRandom:
        settings.fixed = {draw[0], draw[1], draw[2]};
        break;
      case AblationMode::kVerbOnly:
        settings.fixed = {std::nullopt, draw[1], draw[2]};
        break;
      case AblationMode::kVerbObject:
        settings.fixed = {std::nullopt, std::nullopt, draw[2]};
        break;
      case AblationMode::kFull:
        break;
    }
  }

  const int steps = hyper.mode == AblationMode::kRandom ? 0 : hyper.steps;
  std::array<std::vector<double>, 3> m1, m2;
  for (int c = 0; c < 3; ++c) {
    m1[c].assign(n[c], 0.0);
    m2[c].assign(n[c], 0.0);
  }
  for (int step = 0; step < steps; ++step) {
    const double frac = steps > 1 ? static_cast<double>(step) / (steps - 1) : 0.0;
    ml.temperature = hyper.tau_start * std::pow(hyper.tau_end / hyper.tau_start, frac);
    Rng rng(derive_seed({hyper.seed, kStepStream, static_cast<std::uint64_t>(step)}));
    const SoftLoss sl = soft_scene_loss(ml, cache, params, rng, settings);

    StepRecord rec;
    rec.step = step;
    rec.loss = sl.loss;
    rec.tau = ml.temperature;
    rec.argmax = {argmax(sl.weights.component[0]), argmax(sl.weights.component[1]),
                  argmax(sl.weights.component[2])};
    trace.steps.push_back(rec);

    const double bc1 = 1.0 - std::pow(hyper.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(hyper.beta2, step + 1);
    for (int c = 0; c < 3; ++c) {
      if (settings.fixed[c]) continue;
      for (std::size_t k = 0; k < n[c]; ++k) {
        const double g = sl.gradient[c][k];
        m1[c][k] = hyper.beta1 * m1[c][k] + (1.0 - hyper.beta1) * g;
        m2[c][k] = hyper.beta2 * m2[c][k] + (1.0 - hyper.beta2) * g * g;
        ml.logits[c][k] -= hyper.learning_rate * (m1[c][k] / bc1) / (std::sqrt(m2[c][k] / bc2) + hyper.adam_epsilon);
      }
    }
  }
  trace.final_logits = ml;

  // Per-component argmax of the logits; exact ties go to the largest of a
  // final Gumbel draw among the tied entries.
  Rng final_rng(derive_seed({hyper.seed, kFinalStream}));
  const auto final_noise = draw_mixture_noise(ml, final_rng);
  std::array<std::size_t, 3> pick{};
  for (int c = 0; c < 3; ++c) {
    if (settings.fixed[c]) {
      pick[c] = *settings.fixed[c];
      continue;
    }
    const auto& l = ml.logits[c];
    const double top = *std::max_element(l.begin(), l.end());
    std::size_t best = n[c];
    for (std::size_t k = 0; k < n[c]; ++k) {
      if (l[k] != top) continue;
      if (best == n[c] || final_noise[c][k] > final_noise[c][best]) best = k;
    }
    pick[c] = best;
  }
  trace.triplet = {pick[0], pick[1], pick[2]};
  trace.prompt = concat_prompt(trace.triplet, vocab);

  const PointCloud cloud =
      render_triplet(trace.triplet, vocab, cache.pool(), cache.scenario(), cache.pedestrian());
  trace.hard_loss = hard_loss(cloud, cache.gt(), params, hyper.delta, hyper.eta);
  trace.detections = detect(cloud, params);
  trace.gt_box = cache.gt();
  trace.score = score_trial(trace.detections, cache.gt());
  return trace;
}

AttackTrace optimize(const Vocabulary& v, const ObjectPool& pool, const ScenarioConfig& scenario,
                     const DetectorParams& params, const AttackHyper& hyper) {
  hyper.validate();
  const RenderCache cache(v, pool, scenario, build_pedestrian_template());
  return optimize(cache, params, hyper);
}

ExhaustiveResult exhaustive_search(const RenderCache& cache, const DetectorParams& params, double delta, double eta) {
  ExhaustiveResult r;
  r.losses.assign(cache.size(), 0.0);
  parallel_for(cache.size(), [&](std::size_t i) {
    r.losses[i] = hard_loss(cache.hard_cloud(i), cache.gt(), params, delta, eta);
  });
  // Enumeration order is lexicographic, so the first minimum wins ties.
  const std::size_t best = static_cast<std::size_t>(std::min_element(r.losses.begin(), r.losses.end()) - r.losses.begin());
  r.best = enumerate_triplets(cache.vocab()).at(best);
  return r;
}

ExhaustiveResult exhaustive_search(const Vocabulary& v, const ObjectPool& pool, const ScenarioConfig& scenario,
                                   const DetectorParams& params) {
  if (v.size() > kMaxExhaustive) throw Error(ErrorCode::kSpaceTooLarge, "vocabulary has more than 10000 triplets");
  const RenderCache cache(v, pool, scenario, build_pedestrian_template());
  return exhaustive_search(cache, params);
}

// ---------------------------------------------------------------------------
// Trace I/O
// ---------------------------------------------------------------------------

namespace {

nlohmann::json triplet_json(const VopTriplet& t, const Vocabulary& v) {
  return {{"verb", v.verbs.at(t.verb)}, {"object", v.objects.at(t.object)}, {"pose", v.poses.at(t.pose)},
          {"index", triplet_index(t, v)}};
}

nlohmann::json box_json(const Box3D& b) {
  return {{"center", {b.center.x(), b.center.y(), b.center.z()}},
          {"size", {b.size.x(), b.size.y(), b.size.z()}},
          {"yaw", b.yaw}};
}

}  // namespace

void write_trace(const AttackTrace& trace, const Vocabulary& v, const std::filesystem::path& steps_jsonl,
                 const std::filesystem::path& summary_json) {
  std::ofstream steps(steps_jsonl);
  if (!steps) throw Error(ErrorCode::kIo, "cannot write " + steps_jsonl.string());
  for (const auto& s : trace.steps) {
    const nlohmann::json rec = {{"step", s.step}, {"loss", s.loss}, {"tau", s.tau},
                                {"argmax", triplet_json(s.argmax, v)}};
    steps << rec.dump() << '\n';
  }
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : trace.detections) {
    dets.push_back({{"box", box_json(d.box)}, {"confidence", d.confidence}, {"cell", d.cell}});
  }
  nlohmann::json logits;
  logits["verb"] = trace.final_logits.logits[kVerb];
  logits["object"] = trace.final_logits.logits[kObject];
  logits["pose"] = trace.final_logits.logits[kPose];
  const auto& h = trace.hyper;
  const nlohmann::json summary = {
      {"mode", to_string(h.mode)},
      {"seed", h.seed},
      {"hyper",
       {{"steps", h.steps},
        {"learning_rate", h.learning_rate},
        {"beta1", h.beta1},
        {"beta2", h.beta2},
        {"tau_start", h.tau_start},
        {"tau_end", h.tau_end},
        {"delta", h.delta},
        {"eta", h.eta},
        {"straight_through", h.straight_through}}},
      {"steps_run", trace.steps.size()},
      {"triplet", triplet_json(trace.triplet, v)},
      {"prompt", trace.prompt},
      {"hard_loss", trace.hard_loss},
      {"detected", trace.score.detected},
      {"attacked", trace.score.attacked},
      {"max_iou", trace.score.max_iou},
      {"asr", trace.score.attacked ? 100.0 : 0.0},
      {"gt_box", box_json(trace.gt_box)},
      {"final_logits", logits},
      {"detections", dets}};
  std::ofstream out(summary_json);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + summary_json.string());
  out << summary.dump(2) << '\n';
}

}  // namespace advforge
