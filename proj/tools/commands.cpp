#include "commands.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "advforge/adversarial.hpp"
#include "advforge/detector.hpp"
#include "advforge/error.hpp"
#include "advforge/harness.hpp"
#include "advforge/lidar.hpp"
#include "advforge/mesh_io.hpp"
#include "advforge/physical_plan.hpp"
#include "advforge/rng.hpp"
#include "advforge/training_scenes.hpp"
#include "config.hpp"

namespace advforge::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Turns library errors raised while reading inputs into config errors.
template <typename Fn>
auto loading(const Node& at, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    at.fail(e.what());
  }
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared schema pieces
// ---------------------------------------------------------------------------

std::uint64_t resolve_seed(const CommandOptions& o, const Node& root) {
  if (o.seed) return *o.seed;
  if (root.has("seed")) return root.at("seed").as_uint();
  if (const char* env = std::getenv(kSeedEnv)) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*env == '\0' || *env == '-' || *end != '\0' || errno != 0) {
      throw ConfigError(std::string(kSeedEnv) + "='" + env + "' is not a non-negative integer");
    }
    return v;
  }
  throw ConfigError(root.doc().source() + ": a seed is required (--seed, a \"seed\" key or " + kSeedEnv + ")");
}

int positive_int(const Node& n, std::string_view key, int fallback) {
  const int v = n.get(key, fallback);
  if (v < 1) n.at(key).fail("must be >= 1");
  return v;
}

Vec3 read_vec3(const Node& n) {
  const auto v = n.as_doubles();
  if (v.size() != 3) n.fail("expected three numbers");
  return Vec3(v[0], v[1], v[2]);
}

LidarConfig read_lidar(const Node& n) {
  n.allow_only({"beams", "elevation_min_deg", "elevation_max_deg", "azimuth_step_deg", "max_range", "origin",
                "noise_sigma", "dropout_prob"});
  LidarConfig c;
  c.beams = positive_int(n, "beams", c.beams);
  c.elevation_min_deg = n.get("elevation_min_deg", c.elevation_min_deg);
  c.elevation_max_deg = n.get("elevation_max_deg", c.elevation_max_deg);
  c.azimuth_step_deg = n.get("azimuth_step_deg", c.azimuth_step_deg);
  c.max_range = n.get("max_range", c.max_range);
  if (auto o = n.find("origin")) c.origin = read_vec3(*o);
  c.noise_sigma = n.get("noise_sigma", c.noise_sigma);
  c.dropout_prob = n.get("dropout_prob", c.dropout_prob);
  loading(n, [&] { c.validate(); });
  return c;
}

LidarConfig read_lidar_opt(const Node& root, std::string_view key) {
  if (auto n = root.find(key)) return read_lidar(*n);
  return {};
}

PlacementRange read_range(const Node& n) {
  n.allow_only({"min_distance", "max_distance", "max_abs_bearing_deg", "max_abs_lateral"});
  PlacementRange r;
  r.min_distance = n.get("min_distance", r.min_distance);
  r.max_distance = n.get("max_distance", r.max_distance);
  r.max_abs_bearing_deg = n.get("max_abs_bearing_deg", r.max_abs_bearing_deg);
  r.max_abs_lateral = n.get("max_abs_lateral", r.max_abs_lateral);
  if (!(r.min_distance > 0.0 && r.min_distance < r.max_distance)) n.fail("need 0 < min_distance < max_distance");
  if (!(r.max_abs_bearing_deg >= 0.0 && r.max_abs_bearing_deg <= 90.0)) n.fail("max_abs_bearing_deg must be in [0, 90]");
  if (!(r.max_abs_lateral > 0.0)) n.fail("max_abs_lateral must be > 0");
  return r;
}

Environment read_environment(const Node& n, std::uint64_t env_seed) {
  return loading(n, [&] { return make_environment(n.as_string(), env_seed); });
}

ScenarioConfig read_scenario(const Node& n, std::uint64_t seed) {
  n.allow_only({"scene", "env_seed", "distance", "angle_deg", "velocity", "n_frames", "lidar"});
  ScenarioConfig s;
  const std::uint64_t env_seed = n.has("env_seed") ? n.at("env_seed").as_uint() : 0;
  s.env = n.has("scene") ? read_environment(n.at("scene"), env_seed) : make_environment("open_lot", env_seed);
  s.distance = n.get("distance", s.distance);
  s.angle_deg = n.get("angle_deg", s.angle_deg);
  s.velocity = n.get("velocity", s.velocity);
  s.n_frames = positive_int(n, "n_frames", s.n_frames);
  s.lidar = read_lidar_opt(n, "lidar");
  s.lidar.seed = seed;
  loading(n, [&] { s.validate(); });
  return s;
}

struct Assets {
  ObjectPool pool;
  Vocabulary vocab;
};

Vocabulary read_inline_vocab(const Node& n) {
  n.allow_only({"verbs", "objects", "poses", "base"});
  Vocabulary v;
  v.verbs = n.at("verbs").as_strings();
  v.objects = n.at("objects").as_strings();
  v.poses = n.at("poses").as_strings();
  if (n.has("base")) v.base = n.at("base").as_string();
  return v;
}

fs::path existing_path(const Node& n) {
  const fs::path p = n.as_path();
  if (!fs::exists(p)) n.fail("file not found: " + p.string());
  return p;
}

Assets read_assets(const Node& root) {
  Assets a;
  const auto n = root.find("assets");
  if (n) n->allow_only({"pool", "vocabulary"});
  if (n && n->has("pool")) {
    const Node p = n->at("pool");
    a.pool = loading(p, [&] { return load_object_pool(existing_path(p)); });
  } else {
    a.pool = default_object_pool();
  }
  if (n && n->has("vocabulary")) {
    const Node v = n->at("vocabulary");
    a.vocab = v.is_object() ? read_inline_vocab(v) : loading(v, [&] { return load_vocabulary(existing_path(v)); });
    loading(v, [&] { a.vocab.validate(); });
    for (const auto& o : a.vocab.objects) {
      if (!a.pool.contains(o)) v.fail("object '" + o + "' is not in the object pool");
    }
  } else {
    a.vocab = default_vocabulary();
  }
  return a;
}

std::size_t lookup(const Node& n, const std::vector<std::string>& names, const char* what) {
  const std::string s = n.as_string();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == s) return i;
  }
  n.fail(std::string("unknown ") + what + " '" + s + "' (not in the vocabulary)");
}

VopTriplet read_triplet(const Node& n, const Vocabulary& v) {
  n.allow_only({"verb", "object", "pose"});
  return {lookup(n.at("verb"), v.verbs, "verb"), lookup(n.at("object"), v.objects, "object"),
          lookup(n.at("pose"), v.poses, "pose")};
}

json triplet_names(const VopTriplet& t, const Vocabulary& v) {
  return {{"verb", v.verbs[t.verb]}, {"object", v.objects[t.object]}, {"pose", v.poses[t.pose]}};
}

BodyRegion read_region(const Node& n) {
  const auto r = parse_body_region(n.as_string());
  if (!r || *r == BodyRegion::kNone) n.fail("unknown body region '" + n.as_string() + "'");
  return *r;
}

std::vector<BodyRegion> read_regions(const Node& n) {
  std::vector<BodyRegion> out;
  for (const auto& item : n.items()) out.push_back(read_region(item));
  return out;
}

ConnectivityGap read_gap(const Node& n) {
  n.allow_only({"axis", "width", "center"});
  ConnectivityGap g;
  g.axis = n.get("axis", g.axis);
  g.width = n.get("width", g.width);
  g.center = n.get("center", g.center);
  return g;
}

AttributeSpec read_attributes(const Node& n) {
  n.allow_only({"topology_mask", "connectivity_gap", "intensity_factor", "occluder"});
  AttributeSpec a;
  if (auto m = n.find("topology_mask")) a.topology_mask = read_regions(*m);
  if (auto g = n.find("connectivity_gap")) a.connectivity_gap = read_gap(*g);
  if (auto f = n.find("intensity_factor")) a.intensity_factor = f->as_double();
  if (auto o = n.find("occluder")) a.occluder = read_region(*o);
  loading(n, [&] { a.validate(); });
  return a;
}

TargetSpec read_target(const Node& n, const Vocabulary& v) {
  n.allow_only({"attributes", "triplet"});
  TargetSpec t;
  if (auto a = n.find("attributes")) t.attributes = read_attributes(*a);
  if (auto tr = n.find("triplet")) t.triplet = read_triplet(*tr, v);
  return t;
}

TargetSpec read_target_opt(const Node& root, const Vocabulary& v) {
  if (auto n = root.find("target")) return read_target(*n, v);
  return {};
}

DetectorParams read_params(const Node& n) {
  const fs::path p = existing_path(n);
  return loading(n, [&] { return load_params(p); });
}

json box_json(const Box3D& b) {
  return {{"center", {b.center.x(), b.center.y(), b.center.z()}},
          {"size", {b.size.x(), b.size.y(), b.size.z()}},
          {"yaw", b.yaw}};
}

Box3D read_box(const Node& n) {
  n.allow_only({"center", "size", "yaw"});
  Box3D b;
  b.center = read_vec3(n.at("center"));
  b.size = read_vec3(n.at("size"));
  b.yaw = n.at("yaw").as_double();
  if (!(b.size.minCoeff() > 0.0)) n.at("size").fail("box sizes must be positive");
  return b;
}

json detections_json(std::span<const Detection> dets) {
  json out = json::array();
  for (const auto& d : dets) out.push_back({{"box", box_json(d.box)}, {"confidence", d.confidence}, {"cell", d.cell}});
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

class Outputs {
 public:
  Outputs(fs::path dir, std::string subcommand, std::uint64_t seed, const LocatedJson& doc)
      : dir_(std::move(dir)), subcommand_(std::move(subcommand)), seed_(seed), doc_(doc) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir_.string() + ": " + ec.message());
  }

  fs::path file(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  const fs::path& dir() const noexcept { return dir_; }

  /// Config and seed for embedding in CSV outputs.
  std::string preamble() const {
    return "advforge " + subcommand_ + " seed=" + std::to_string(seed_) + "\nconfig=" + doc_.root().dump();
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream out(file(name));
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir_ / name).string());
    out << j.dump(2) << '\n';
  }

  /// The only file carrying wall-clock time.
  void write_manifest() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    const json m = {{"tool", "advforge"},          {"subcommand", subcommand_}, {"seed", seed_},
                    {"config_source", doc_.source()}, {"config", doc_.root()},   {"outputs", files_},
                    {"created_utc", stamp}};
    std::ofstream out(dir_ / "manifest.json");
    if (!out) throw Error(ErrorCode::kIo, "cannot write manifest in " + dir_.string());
    out << m.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string subcommand_;
  std::uint64_t seed_;
  const LocatedJson& doc_;
  std::vector<std::string> files_;
};

void write_comment(std::ostream& out, const std::string& text) {
  std::size_t start = 0;
  for (;;) {
    const auto nl = text.find('\n', start);
    out << "# " << text.substr(start, nl == std::string::npos ? std::string::npos : nl - start) << '\n';
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
}

LocatedJson load_config(const CommandOptions& o) {
  LocatedJson doc = LocatedJson::load(o.config);
  for (const auto& s : o.overrides) doc.apply_override(s);
  return doc;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

std::string cmd_simulate(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  root.allow_only({"seed", "scenario", "target", "assets", "sector"});
  const std::uint64_t seed = resolve_seed(o, root);
  const ScenarioConfig sc = read_scenario(root.at("scenario"), seed);
  const Assets assets = read_assets(root);
  const TargetSpec target = read_target_opt(root, assets.vocab);
  const bool sector = root.get("sector", false);

  const TriangleMesh ped = build_pedestrian_template();
  const auto meshes = build_target(target, ped, assets.vocab, assets.pool);
  const Pose3D pose = place_target(ped, sc);
  const ComposedScene scene = compose(sc.env, meshes, pose);
  const Box3D gt = target_box(std::span<const TriangleMesh>(&ped, 1), pose);
  LidarConfig lidar = sc.lidar;
  if (sector) lidar = sector_config(lidar, scene.target_bounds);
  const Bvh* bvh = scene.bvh.get();
  const auto frames = scan_sequence(std::span<const Bvh* const>(&bvh, 1), lidar, sc.velocity, sc.n_frames);

  Outputs out(o.out, "simulate", seed, doc);
  std::size_t total = 0;
  for (const auto& f : frames) {
    char stem[16];
    std::snprintf(stem, sizeof stem, "%06d", f.frame);
    write_kitti_bin(f.scan.cloud, out.file(std::string(stem) + ".bin"));
    const json sidecar = {{"format", "kitti_velodyne_float32_xyzi"},
                          {"frame", f.frame},
                          {"time_s", f.frame * kFramePeriod},
                          {"coordinates", "world"},
                          {"sensor_origin", {f.origin.x(), f.origin.y(), f.origin.z()}},
                          {"n_points", f.scan.cloud.size()},
                          {"seed", seed},
                          {"scene", sc.env.name},
                          {"beams", lidar.beams},
                          {"gt_box", box_json(gt)},
                          {"target_bounds", box_json(scene.target_bounds)}};
    out.write_json(std::string(stem) + ".json", sidecar);
    total += f.scan.cloud.size();
  }
  out.write_manifest();
  return "simulate: " + std::to_string(frames.size()) + " frame(s), " + std::to_string(total) + " points -> " +
         out.dir().string();
}

// ---------------------------------------------------------------------------
// train-detector
// ---------------------------------------------------------------------------

std::string cmd_train(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  root.allow_only({"seed", "n_scenes", "assets", "sampler", "lidar", "hyper", "output"});
  const std::uint64_t seed = resolve_seed(o, root);
  const int n_scenes = positive_int(root, "n_scenes", 2000);
  if (auto a = root.find("assets")) a->allow_only({"pool"});
  const Assets assets = read_assets(root);

  SamplerConfig sc;
  sc.seed = seed;
  sc.lidar = read_lidar_opt(root, "lidar");
  if (auto n = root.find("sampler")) {
    n->allow_only({"environments", "range", "positive_fraction", "object_fraction", "held_out_max_distance",
                   "sector_margin_deg"});
    if (auto e = n->find("environments")) {
      sc.environments = e->as_strings();
      for (const auto& item : e->items()) read_environment(item, 0);
      if (sc.environments.empty()) e->fail("need at least one environment");
    }
    if (auto r = n->find("range")) sc.range = read_range(*r);
    sc.positive_fraction = n->get("positive_fraction", sc.positive_fraction);
    sc.object_fraction = n->get("object_fraction", sc.object_fraction);
    sc.held_out_max_distance = n->get("held_out_max_distance", sc.held_out_max_distance);
    sc.sector_margin_deg = n->get("sector_margin_deg", sc.sector_margin_deg);
    if (!(sc.positive_fraction > 0.0 && sc.object_fraction >= 0.0 && sc.positive_fraction + sc.object_fraction <= 1.0)) {
      n->fail("need positive_fraction > 0, object_fraction >= 0 and their sum <= 1");
    }
  }
  TrainHyper h;
  h.seed = seed;
  if (auto n = root.find("hyper")) {
    n->allow_only({"epochs", "batch", "learning_rate", "focal_alpha", "focal_gamma", "regression_weight",
                   "held_out_scenes"});
    h.epochs = positive_int(*n, "epochs", h.epochs);
    h.batch = positive_int(*n, "batch", h.batch);
    h.learning_rate = n->get("learning_rate", h.learning_rate);
    h.focal_alpha = n->get("focal_alpha", h.focal_alpha);
    h.focal_gamma = n->get("focal_gamma", h.focal_gamma);
    h.regression_weight = n->get("regression_weight", h.regression_weight);
    h.held_out_scenes = n->get("held_out_scenes", h.held_out_scenes);
    if (!(h.learning_rate > 0.0)) n->at("learning_rate").fail("must be > 0");
    if (h.held_out_scenes < 0) n->at("held_out_scenes").fail("must be >= 0");
  }
  const std::string name = root.get("output", "detector.bin");

  const auto t0 = std::chrono::steady_clock::now();
  const StandardSceneSampler sampler(sc, assets.pool);
  const TrainResult r = train(sampler, n_scenes, h);
  std::cerr << "trained " << h.epochs << " epochs on " << n_scenes << " scenes in " << fmt("%.1f", seconds_since(t0))
            << " s\n";

  Outputs out(o.out, "train-detector", seed, doc);
  ParamsMetadata meta{seed, h, n_scenes, r.held_out_dsr, r.held_out_n};
  save_params(r.params, meta, out.file(name));
  out.file(name + ".json");
  out.write_json("training.json", {{"epoch_loss", r.epoch_loss},
                                   {"held_out_dsr", r.held_out_dsr},
                                   {"held_out_n", r.held_out_n},
                                   {"n_scenes", n_scenes},
                                   {"seed", seed}});
  out.write_manifest();
  return "train-detector: held-out DSR " + format_rate(r.held_out_dsr) + "% over " + std::to_string(r.held_out_n) +
         " scenes -> " + (out.dir() / name).string();
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

AttackHyper read_attack_hyper(const Node& root, const CommandOptions& o, std::uint64_t seed) {
  AttackHyper h;
  h.seed = seed;
  if (auto n = root.find("attack")) {
    n->allow_only({"mode", "steps", "learning_rate", "beta1", "beta2", "adam_epsilon", "tau_start", "tau_end", "delta",
                   "eta", "straight_through"});
    if (auto m = n->find("mode")) h.mode = loading(*m, [&] { return parse_ablation_mode(m->as_string()); });
    h.steps = positive_int(*n, "steps", h.steps);
    h.learning_rate = n->get("learning_rate", h.learning_rate);
    h.beta1 = n->get("beta1", h.beta1);
    h.beta2 = n->get("beta2", h.beta2);
    h.adam_epsilon = n->get("adam_epsilon", h.adam_epsilon);
    h.tau_start = n->get("tau_start", h.tau_start);
    h.tau_end = n->get("tau_end", h.tau_end);
    h.delta = n->get("delta", h.delta);
    h.eta = n->get("eta", h.eta);
    h.straight_through = n->get("straight_through", h.straight_through);
    loading(*n, [&] { h.validate(); });
  }
  if (o.mode) {
    try {
      h.mode = parse_ablation_mode(*o.mode);
    } catch (const Error& e) {
      throw ConfigError(std::string("--mode: ") + e.what());
    }
  }
  return h;
}

std::string cmd_attack(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  root.allow_only({"seed", "params", "scenario", "assets", "attack"});
  const std::uint64_t seed = resolve_seed(o, root);
  const DetectorParams params = read_params(root.at("params"));
  const ScenarioConfig sc = read_scenario(root.at("scenario"), seed);
  const Assets assets = read_assets(root);
  const AttackHyper h = read_attack_hyper(root, o, seed);
  if (o.exhaustive && assets.vocab.size() > kMaxExhaustive) {
    throw ConfigError("--exhaustive: " + std::to_string(assets.vocab.size()) + " triplets exceed the limit of " +
                      std::to_string(kMaxExhaustive));
  }

  auto t0 = std::chrono::steady_clock::now();
  const RenderCache cache(assets.vocab, assets.pool, sc, build_pedestrian_template());
  std::cerr << "render cache: " << cache.size() << " triplets in " << fmt("%.1f", seconds_since(t0)) << " s\n";
  Outputs out(o.out, "attack", seed, doc);

  if (o.exhaustive) {
    const ExhaustiveResult ex = exhaustive_search(cache, params, h.delta, h.eta);
    const auto all = enumerate_triplets(assets.vocab);
    std::ofstream csv(out.file("exhaustive.csv"));
    if (!csv) throw Error(ErrorCode::kIo, "cannot write exhaustive.csv");
    write_comment(csv, out.preamble());
    csv << "index,verb,object,pose,loss\n";
    std::cerr << "index  loss      prompt\n";
    for (std::size_t i = 0; i < all.size(); ++i) {
      const auto& t = all[i];
      csv << i << ',' << assets.vocab.verbs[t.verb] << ',' << assets.vocab.objects[t.object] << ','
          << assets.vocab.poses[t.pose] << ',' << fmt("%.6f", ex.losses[i]) << '\n';
      std::cerr << fmt("%5.0f", static_cast<double>(i)) << "  " << fmt("%.6f", ex.losses[i]) << "  "
                << concat_prompt(t, assets.vocab) << (t == ex.best ? "   <- best" : "") << '\n';
    }
    out.write_json("exhaustive.json", {{"best", triplet_names(ex.best, assets.vocab)},
                                       {"best_index", triplet_index(ex.best, assets.vocab)},
                                       {"prompt", concat_prompt(ex.best, assets.vocab)},
                                       {"losses", ex.losses}});
    out.write_manifest();
    return "attack --exhaustive: best \"" + concat_prompt(ex.best, assets.vocab) + "\" loss " +
           fmt("%.4f", ex.losses[triplet_index(ex.best, assets.vocab)]) + " over " + std::to_string(all.size()) +
           " triplets";
  }

  t0 = std::chrono::steady_clock::now();
  const AttackTrace trace = optimize(cache, params, h);
  std::cerr << to_string(h.mode) << " optimisation: " << trace.steps.size() << " steps in "
            << fmt("%.1f", seconds_since(t0)) << " s\n";
  write_trace(trace, assets.vocab, out.file("trace.jsonl"), out.file("summary.json"));
  out.write_manifest();
  return "attack " + to_string(h.mode) + ": \"" + trace.prompt + "\" hard_loss " + fmt("%.4f", trace.hard_loss) +
         " attacked=" + (trace.score.attacked ? "yes" : "no") + " detected=" + (trace.score.detected ? "yes" : "no");
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::string cmd_sweep(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  const std::string kind = root.at("kind").as_string();
  if (kind == "attribute") {
    root.allow_only({"seed", "kind", "params", "assets", "lidar", "n_trials", "sector_margin_deg", "scenes",
                     "conditions", "range", "topology_mask", "connectivity_gap", "intensity_factor",
                     "combination_triplet"});
  } else if (kind == "env") {
    root.allow_only({"seed", "kind", "params", "assets", "lidar", "n_trials", "sector_margin_deg", "factor", "values",
                     "scene", "base_distance", "base_angle_deg", "base_velocity", "distance_jitter",
                     "angle_jitter_deg", "target"});
  } else if (kind == "beam") {
    root.allow_only({"seed", "kind", "params", "assets", "lidar", "n_trials", "sector_margin_deg", "beams", "scene",
                     "range", "target"});
  } else if (kind == "occlusion") {
    root.allow_only({"seed", "kind", "params", "assets", "lidar", "n_trials", "sector_margin_deg", "regions", "scenes",
                     "range"});
  } else {
    root.at("kind").fail("unknown sweep kind '" + kind + "' (attribute, env, beam, occlusion)");
  }
  const std::uint64_t seed = resolve_seed(o, root);

  HarnessContext ctx;
  ctx.seed = seed;
  ctx.lidar = read_lidar_opt(root, "lidar");
  ctx.params = read_params(root.at("params"));
  Assets assets = read_assets(root);
  ctx.pool = std::move(assets.pool);
  ctx.vocab = std::move(assets.vocab);
  ctx.pedestrian = build_pedestrian_template();
  ctx.sector_margin_deg = root.get("sector_margin_deg", ctx.sector_margin_deg);
  const int n_trials = root.get("n_trials", 200);
  if (n_trials < 0) root.at("n_trials").fail("must be >= 0");

  auto read_scenes = [&](const Node& n) {
    const auto names = n.as_strings();
    for (const auto& item : n.items()) read_environment(item, 0);
    return names;
  };
  auto read_scene = [&](std::string_view key) {
    if (!root.has(key)) return std::string("open_lot");
    read_environment(root.at(key), 0);
    return root.at(key).as_string();
  };

  SweepOutput result;
  std::vector<BodyRegion> regions;
  const auto t0 = std::chrono::steady_clock::now();
  if (kind == "attribute") {
    AttributeSweepConfig cfg;
    cfg.n_trials = n_trials;
    if (auto n = root.find("scenes")) cfg.scenes = read_scenes(*n);
    if (auto n = root.find("range")) cfg.range = read_range(*n);
    if (auto n = root.find("topology_mask")) cfg.topology_mask = read_regions(*n);
    if (auto n = root.find("connectivity_gap")) cfg.gap = read_gap(*n);
    cfg.intensity_factor = root.get("intensity_factor", cfg.intensity_factor);
    if (auto n = root.find("combination_triplet")) cfg.combination_triplet = read_triplet(*n, ctx.vocab);
    if (auto n = root.find("conditions")) {
      cfg.conditions = n->as_strings();
      for (const auto& item : n->items()) {
        loading(item, [&] {
          const TargetSpec t = attribute_condition(item.as_string(), cfg);
          t.attributes.validate();
        });
      }
    }
    result = run_attribute_sweep(ctx, cfg);
  } else if (kind == "env") {
    EnvSweepConfig cfg;
    cfg.n_trials = n_trials;
    if (auto n = root.find("factor")) cfg.factor = loading(*n, [&] { return parse_env_factor(n->as_string()); });
    if (auto n = root.find("values")) cfg.values = n->as_doubles();
    cfg.scene = read_scene("scene");
    cfg.base_distance = root.get("base_distance", cfg.base_distance);
    cfg.base_angle_deg = root.get("base_angle_deg", cfg.base_angle_deg);
    cfg.base_velocity = root.get("base_velocity", cfg.base_velocity);
    cfg.distance_jitter = root.get("distance_jitter", cfg.distance_jitter);
    cfg.angle_jitter_deg = root.get("angle_jitter_deg", cfg.angle_jitter_deg);
    cfg.target = read_target_opt(root, ctx.vocab);
    if (cfg.factor == EnvFactor::kDistance) {
      for (const auto& v : root.has("values") ? root.at("values").items() : std::vector<Node>{}) {
        if (!(v.as_double() > 0.0)) v.fail("distances must be > 0");
      }
    }
    result = run_env_sweep(ctx, cfg);
  } else if (kind == "beam") {
    BeamSweepConfig cfg;
    cfg.n_trials = n_trials;
    if (auto n = root.find("beams")) {
      cfg.beams.clear();
      for (const auto& item : n->items()) {
        const auto b = item.as_int();
        if (b < 1 || b > 1024) item.fail("beam count must be in [1, 1024]");
        cfg.beams.push_back(static_cast<int>(b));
      }
    }
    cfg.scene = read_scene("scene");
    if (auto n = root.find("range")) cfg.range = read_range(*n);
    cfg.target = read_target_opt(root, ctx.vocab);
    result = run_beam_sweep(ctx, cfg);
  } else {
    OcclusionConfig cfg;
    cfg.n_trials = n_trials;
    if (auto n = root.find("regions")) cfg.regions = read_regions(*n);
    if (auto n = root.find("scenes")) cfg.scenes = read_scenes(*n);
    if (auto n = root.find("range")) cfg.range = read_range(*n);
    regions = cfg.regions;
    result = run_occlusion_study(ctx, cfg);
  }
  std::cerr << kind << " sweep: " << result.trials.size() << " trials in " << fmt("%.1f", seconds_since(t0)) << " s\n";

  Outputs out(o.out, "sweep", seed, doc);
  write_cells_csv(result.cells, out.file("cells.csv"), out.preamble());
  for (const auto& c : result.cells) {
    std::cerr << c.scenario << " / " << c.condition << ": n=" << c.n << " DSR " << format_rate(c.dsr()) << " +- "
              << format_rate(c.dsr_stderr()) << "  ASR " << format_rate(c.asr()) << " +- "
              << format_rate(c.asr_stderr()) << '\n';
  }
  if (kind == "occlusion") {
    std::ofstream csv(out.file("occlusion.csv"));
    if (!csv) throw Error(ErrorCode::kIo, "cannot write occlusion.csv");
    csv << "region,n_scenes,mean_asr,std_asr\n";
    for (const auto& row : occlusion_table(result, regions)) {
      csv << row.region << ',' << row.per_scene.size() << ',' << format_rate(row.mean_asr) << ','
          << format_rate(row.std_asr) << '\n';
    }
  }
  if (o.emit_plotdata) write_plotdata_csv(result.trials, out.file("plotdata.csv"), out.preamble());
  out.write_manifest();
  return "sweep " + kind + ": " + std::to_string(result.cells.size()) + " cell(s), " +
         std::to_string(result.trials.size()) + " trial(s) -> " + (out.dir() / "cells.csv").string();
}

// ---------------------------------------------------------------------------
// plan-physical
// ---------------------------------------------------------------------------

PlanOptions read_plan_options(const Node& n, std::uint64_t seed) {
  n.allow_only({"surface_samples", "coarse_samples", "yaw_steps", "coarse_scales", "translation_step", "yaw_step_deg",
                "scale_step", "refine_tolerance", "min_improvement"});
  PlanOptions p;
  p.seed = seed;
  p.surface_samples = static_cast<std::size_t>(positive_int(n, "surface_samples", static_cast<int>(p.surface_samples)));
  p.coarse_samples = static_cast<std::size_t>(positive_int(n, "coarse_samples", static_cast<int>(p.coarse_samples)));
  p.yaw_steps = positive_int(n, "yaw_steps", p.yaw_steps);
  if (auto s = n.find("coarse_scales")) {
    p.coarse_scales = s->as_doubles();
    if (p.coarse_scales.empty()) s->fail("need at least one scale");
  }
  p.translation_step = n.get("translation_step", p.translation_step);
  p.yaw_step_deg = n.get("yaw_step_deg", p.yaw_step_deg);
  p.scale_step = n.get("scale_step", p.scale_step);
  p.refine_tolerance = n.get("refine_tolerance", p.refine_tolerance);
  p.min_improvement = n.get("min_improvement", p.min_improvement);
  if (!(p.translation_step > 0.0 && p.yaw_step_deg > 0.0 && p.scale_step > 0.0)) n.fail("step sizes must be > 0");
  return p;
}

std::string cmd_plan(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  root.allow_only({"seed", "target", "budget", "options", "assets", "validate"});
  const std::uint64_t seed = resolve_seed(o, root);
  const Assets assets = read_assets(root);
  const int budget = positive_int(root, "budget", 3);
  const PlanOptions options = root.has("options") ? read_plan_options(root.at("options"), seed) : [&] {
    PlanOptions p;
    p.seed = seed;
    return p;
  }();
  const TriangleMesh ped = build_pedestrian_template();

  // Exactly one target source.
  const Node t = root.at("target");
  t.allow_only({"triplet", "summary", "mesh", "pool_object"});
  if (t.value().size() != 1) t.fail("give exactly one of triplet, summary, mesh, pool_object");
  TriangleMesh target;
  std::optional<VopTriplet> triplet;
  if (auto n = t.find("triplet")) {
    triplet = read_triplet(*n, assets.vocab);
  } else if (auto n = t.find("summary")) {
    const fs::path p = existing_path(*n);
    std::ifstream in(p);
    json s;
    try {
      s = json::parse(in);
      const auto& tr = s.at("triplet");
      const LocatedJson inner = LocatedJson::parse(tr.dump(), p.string());
      const Node names = root_node(inner);
      triplet = VopTriplet{lookup(names.at("verb"), assets.vocab.verbs, "verb"),
                           lookup(names.at("object"), assets.vocab.objects, "object"),
                           lookup(names.at("pose"), assets.vocab.poses, "pose")};
    } catch (const json::exception& e) {
      n->fail(std::string("not an attack summary: ") + e.what());
    }
  } else if (auto n = t.find("mesh")) {
    n->allow_only({"obj", "sidecar"});
    const fs::path obj = existing_path(n->at("obj"));
    const fs::path side = n->has("sidecar") ? existing_path(n->at("sidecar")) : fs::path{};
    target = loading(*n, [&] { return load_mesh(obj, side); });
  } else if (auto n = t.find("pool_object")) {
    n->allow_only({"name", "position", "yaw_deg", "scale"});
    const Node name = n->at("name");
    const PoolEntry& e = loading(name, [&]() -> const PoolEntry& { return assets.pool.at(name.as_string()); });
    const Vec3 pos = n->has("position") ? read_vec3(n->at("position")) : Vec3::Zero();
    target = transform_mesh(e.mesh, Pose3D::make(pos, n->get("yaw_deg", 0.0) * std::numbers::pi / 180.0,
                                                 n->get("scale", 1.0)));
  }
  if (triplet) target = generate_object_part(*triplet, assets.vocab, assets.pool, ped);

  std::optional<std::pair<DetectorParams, ScenarioConfig>> validation;
  if (auto v = root.find("validate")) {
    v->allow_only({"params", "scenario"});
    validation.emplace(read_params(v->at("params")), read_scenario(v->at("scenario"), seed));
  }

  const auto t0 = std::chrono::steady_clock::now();
  AssemblyPlan plan = plan_assembly(target, assets.pool, budget, options);
  std::cerr << "planned " << plan.placements.size() << " placement(s) in " << fmt("%.1f", seconds_since(t0)) << " s\n";
  if (triplet) {
    plan.triplet = triplet;
    plan.prompt = concat_prompt(*triplet, assets.vocab);
  }
  Outputs out(o.out, "plan-physical", seed, doc);
  write_plan(plan, out.file("plan.json"));
  std::string line = "plan-physical: " + std::to_string(plan.placements.size()) + " object(s), residual " +
                     fmt("%.4f", plan.residual) + " m";
  if (validation) {
    const auto& [params, scenario] = *validation;
    const TrialScore planned = validate_plan(plan, assets.pool, ped, scenario, params);
    json v = {{"planned", {{"detected", planned.detected}, {"attacked", planned.attacked}, {"max_iou", planned.max_iou}}}};
    if (triplet) {
      const TrialScore ref = score_with_objects(target, ped, scenario, params);
      v["reference"] = {{"detected", ref.detected}, {"attacked", ref.attacked}, {"max_iou", ref.max_iou}};
      v["attack_flag_preserved"] = ref.attacked == planned.attacked;
    }
    out.write_json("validation.json", v);
    line += std::string(", validated attacked=") + (planned.attacked ? "yes" : "no");
  }
  out.write_manifest();
  return line;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

std::vector<Detection> read_detections(const Node& n) {
  std::vector<Detection> out;
  for (const auto& item : n.items()) {
    item.allow_only({"box", "confidence", "cell"});
    Detection d;
    d.box = read_box(item.at("box"));
    d.confidence = item.at("confidence").as_double();
    d.cell = static_cast<std::int32_t>(item.has("cell") ? item.at("cell").as_int() : -1);
    out.push_back(d);
  }
  return out;
}

std::string cmd_evaluate(const CommandOptions& o) {
  const LocatedJson doc = load_config(o);
  const Node root = root_node(doc);
  root.allow_only({"seed", "detections", "cloud", "params", "gt_box", "conf_threshold"});
  if (root.has("detections") == root.has("cloud")) root.fail("give exactly one of detections, cloud");
  const double threshold = root.get("conf_threshold", kDefaultConfThreshold);
  if (!(threshold >= 0.0 && threshold <= 1.0)) root.at("conf_threshold").fail("must be in [0, 1]");

  std::vector<Detection> dets;
  std::optional<Box3D> gt;
  if (root.has("gt_box")) gt = read_box(root.at("gt_box"));
  std::string source;
  // Inputs produced by other subcommands are parsed with the same located reader.
  auto load_side = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return LocatedJson::parse(ss.str(), p.string());
  };
  std::optional<LocatedJson> side;
  if (auto n = root.find("detections")) {
    const fs::path p = existing_path(*n);
    source = n->as_string();
    side.emplace(load_side(p));
    const Node s = root_node(*side);
    dets = read_detections(s.at("detections"));
    if (!gt) gt = read_box(s.at("gt_box"));
  } else {
    const Node c = root.at("cloud");
    const fs::path p = existing_path(c);
    source = c.as_string();
    const DetectorParams params = read_params(root.at("params"));
    const PointCloud cloud = loading(c, [&] { return read_kitti_bin(p); });
    if (!gt) {
      fs::path sp = p;
      sp.replace_extension(".json");
      if (!fs::exists(sp)) c.fail("no gt_box given and no sidecar " + sp.string());
      side.emplace(load_side(sp));
      gt = read_box(root_node(*side).at("gt_box"));
    }
    dets = detect(cloud, params, threshold);
  }

  const TrialScore score = score_trial(dets, *gt, threshold);
  const std::uint64_t seed = 0;
  Outputs out(o.out, "evaluate", seed, doc);
  out.write_json("evaluation.json", {{"source", source},
                                     {"conf_threshold", threshold},
                                     {"gt_box", box_json(*gt)},
                                     {"n_detections", dets.size()},
                                     {"detected", score.detected},
                                     {"attacked", score.attacked},
                                     {"max_iou", score.max_iou},
                                     {"detections", detections_json(dets)}});
  out.write_manifest();
  return std::string("evaluate: detected=") + (score.detected ? "yes" : "no") +
         " attacked=" + (score.attacked ? "yes" : "no") + " max_iou " + fmt("%.3f", score.max_iou) + " over " +
         std::to_string(dets.size()) + " detection(s)";
}

}  // namespace

std::string run_command(const std::string& name, const CommandOptions& options) {
  if (name == "simulate") return cmd_simulate(options);
  if (name == "train-detector") return cmd_train(options);
  if (name == "attack") return cmd_attack(options);
  if (name == "sweep") return cmd_sweep(options);
  if (name == "plan-physical") return cmd_plan(options);
  if (name == "evaluate") return cmd_evaluate(options);
  throw ConfigError("unknown subcommand '" + name + "'");
}

}  // namespace advforge::cli
