#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "advforge/adversarial.hpp"
#include "advforge/detector.hpp"
#include "advforge/error.hpp"
#include "advforge/scene.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace advforge;
namespace fs = std::filesystem;

namespace {

DetectorParams random_params(std::uint64_t seed, double scale) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, scale);
  DetectorParams p;
  for (auto& v : p.values) v = g(gen);
  return p;
}

// He-initialised weights with an even objectness prior, so confidences are
// far from saturation.
DetectorParams balanced_params(std::uint64_t seed) {
  auto p = DetectorParams::initial(seed);
  p.values[DetectorParams::kTotal - DetectorParams::kBh] = 0.0;
  return p;
}

struct SmallScene {
  PointCloud cloud;
  Box3D gt;
};

SmallScene small_scene(double distance = 8.0, double angle = 10.0) {
  ScenarioConfig s;
  s.env = make_environment("open_lot", 0);
  s.distance = distance;
  s.angle_deg = angle;
  s.lidar.beams = 32;
  s.lidar.seed = 2;
  const auto ped = build_pedestrian_template();
  const std::vector<TriangleMesh> targets{ped};
  const auto scene = compose(s.env, targets, place_target(ped, s));
  const auto lidar = sector_config(s.lidar, scene.target_bounds, 3.0);
  return {scan(*scene.bvh, lidar).cloud, scene.gt_box};
}

Box3D reference_decode(const std::array<double, 8>& o, int ix, int iy, const BevSpec& spec) {
  const double cx = spec.x_min + (ix + 0.5) * spec.cell, cy = spec.y_min + (iy + 0.5) * spec.cell;
  auto size = [](double anchor, double v) { return anchor * std::exp(std::clamp(v, -3.0, 3.0)); };
  Box3D b;
  b.center = Vec3(cx + o[1], cy + o[2], 0.9 + o[3]);
  b.size = Vec3(size(0.3, o[4]), size(0.6, o[5]), size(1.75, o[6]));
  b.yaw = normalize_yaw(std::atan2(cy, cx) + std::numbers::pi + o[7]);
  return b;
}

}  // namespace

TEST_CASE("features match per-cell accumulation") {
  const auto sc = small_scene();
  const BevSpec spec;
  const auto f = featurize(sc.cloud, spec);
  const auto ref = oracle::features(sc.cloud, spec);
  REQUIRE(f.cells.size() == ref.size());
  CHECK(std::is_sorted(f.cells.begin(), f.cells.end()));
  for (const auto& [key, r] : ref) {
    CHECK(f.at(key.first, key.second, kCount) == doctest::Approx(r.count).epsilon(1e-12));
    CHECK(std::abs(f.at(key.first, key.second, kHeight) - r.height) < 1e-9);
    CHECK(std::abs(f.at(key.first, key.second, kIntensity) - r.intensity) < 1e-12);
    CHECK(std::abs(f.at(key.first, key.second, kOffsetX) - r.offset_x) < 1e-12);
    CHECK(std::abs(f.at(key.first, key.second, kOffsetY) - r.offset_y) < 1e-12);
  }
  CHECK(f.at(0, 0, kCount) == 0.0);
}

TEST_CASE("points outside the height band or the grid are ignored") {
  PointCloud c;
  c.points.push_back({Vec3(10, 0, 0.01), 0.5, 1.0});   // ground
  c.points.push_back({Vec3(10, 0, 4.0), 0.5, 1.0});    // overhang
  c.points.push_back({Vec3(-1, 0, 1.0), 0.5, 1.0});    // behind
  c.points.push_back({Vec3(10, 30, 1.0), 0.5, 1.0});   // lateral
  CHECK(featurize(c).cells.empty());
  c.points.push_back({Vec3(10, 0, 1.0), 0.5, 1.0});
  CHECK(featurize(c).cells.size() == 1);
}

TEST_CASE("sparse network equals a dense padded-grid evaluation") {
  const auto sc = small_scene();
  const BevSpec spec;
  for (std::uint64_t seed : {1u, 2u}) {
    const auto params = random_params(seed, 0.4);
    const auto dense = oracle::dense_forward(sc.cloud, params, spec);
    const auto cands = candidates(sc.cloud, params, 0.0, spec);
    REQUIRE(cands.size() == static_cast<std::size_t>(spec.nx() * spec.ny()));
    double worst_conf = 0.0, worst_box = 0.0;
    for (const auto& d : cands) {
      const int ix = d.cell / spec.ny(), iy = d.cell % spec.ny();
      const auto& o = dense.out[static_cast<std::size_t>(d.cell)];
      worst_conf = std::max(worst_conf, std::abs(d.confidence - oracle::logistic(o[0])));
      const Box3D ref = reference_decode(o, ix, iy, spec);
      worst_box = std::max({worst_box, (d.box.center - ref.center).norm(), (d.box.size - ref.size).norm(),
                            std::abs(normalize_yaw(d.box.yaw - ref.yaw))});
    }
    CHECK(worst_conf < 1e-9);
    CHECK(worst_box < 1e-9);
    for (std::size_t i = 1; i < cands.size(); ++i) {
      const bool ordered = cands[i - 1].confidence > cands[i].confidence ||
                           (cands[i - 1].confidence == cands[i].confidence && cands[i - 1].cell < cands[i].cell);
      CHECK(ordered);
    }
  }
}

TEST_CASE("candidates honour the confidence floor") {
  const auto sc = small_scene();
  const auto params = random_params(4, 0.4);
  const auto all = candidates(sc.cloud, params, 0.0);
  const auto some = candidates(sc.cloud, params, 0.6);
  std::size_t expected = 0;
  for (const auto& d : all) expected += d.confidence >= 0.6;
  CHECK(some.size() == expected);
}

TEST_CASE("greedy NMS leaves no overlapping pair and matches a direct greedy pass") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> pos(-3.0, 9.0), conf(0.0, 1.0), yaw(-3.0, 3.0), logsize(-2.0, 5.0);
  std::vector<Detection> dets(600);
  for (auto& d : dets) {
    d.box.center = Vec3(pos(gen), pos(gen), 0.9);
    // Mostly pedestrian-sized, with some boxes far wider than the index buckets.
    const double k = conf(gen) < 0.8 ? 1.0 : std::exp(logsize(gen));
    d.box.size = Vec3(0.6 * k, 0.8 * std::exp(logsize(gen) / 4), 1.7);
    d.box.yaw = yaw(gen);
    d.confidence = conf(gen);
  }
  std::sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  const auto kept = nms(dets);
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(bev_iou(kept[i].box, kept[j].box) <= kNmsIou);
  std::vector<Detection> ref;
  for (const auto& d : dets) {
    bool keep = true;
    for (const auto& k : ref) keep = keep && !(bev_iou(d.box, k.box) > kNmsIou);
    if (keep) ref.push_back(d);
  }
  REQUIRE(kept.size() == ref.size());
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(kept[i].confidence == ref[i].confidence);
}

TEST_CASE("confidence gradient matches central differences on point weights") {
  const auto sc = small_scene();
  const auto params = balanced_params(3);
  const auto g = confidence_gradient(sc.cloud, params, sc.gt, 0.0);
  REQUIRE(g.matched);
  REQUIRE(g.d_weight.size() == sc.cloud.size());
  int probed = 0, good = 0;
  const double h = 1e-4;
  for (std::size_t i = 0; i < sc.cloud.size(); ++i) {
    if (g.d_weight[i] == 0.0 && i % 7 != 0) continue;  // keep a sample of the zero entries
    auto eval = [&](double w) {
      PointCloud c = sc.cloud;
      c.points[i].weight = w;
      return confidence_gradient(c, params, sc.gt, 0.0).confidence;
    };
    const double fd = oracle::central_difference(eval, sc.cloud.points[i].weight, h);
    ++probed;
    good += oracle::relative_error(g.d_weight[i], fd, 1e-7) < 1e-3;
  }
  INFO("probed " << probed << " good " << good);
  CHECK(probed > 20);
  CHECK(good >= 0.95 * probed);
}

TEST_CASE("confidence gradient reports no match when the gate excludes every cell") {
  const auto sc = small_scene();
  // Behind the sensor, outside the grid, so no cell can pass the gate.
  Box3D far = sc.gt;
  far.center.x() = -30.0;
  const auto g = confidence_gradient(sc.cloud, balanced_params(3), far, 0.5);
  CHECK_FALSE(g.matched);
  for (double d : g.d_weight) CHECK(d == 0.0);
}

TEST_CASE("moment mixture reproduces featurisation of the weighted union") {
  const auto a = small_scene(8.0, 10.0);
  const auto b = small_scene(8.5, 11.0);
  const auto c = small_scene(9.0, 9.0);
  const std::vector<PointCloud> comps{b.cloud, c.cloud};
  const BevMixture mix(a.cloud, comps);
  const std::vector<double> factors{0.3, 0.8};
  const auto got = mix.features(factors);
  PointCloud all = a.cloud;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    for (auto p : comps[k].points) {
      p.weight *= factors[k];
      all.points.push_back(p);
    }
  }
  const auto ref = featurize(all);
  REQUIRE(got.cells == ref.cells);
  for (std::size_t i = 0; i < ref.cells.size(); ++i) {
    for (int ch = 0; ch < kFeatureChannels; ++ch) CHECK(std::abs(got.values[i][ch] - ref.values[i][ch]) < 1e-9);
  }
}

TEST_CASE("mixture factor gradient matches central differences") {
  const auto a = small_scene(8.0, 10.0);
  const auto b = small_scene(8.5, 11.0);
  const std::vector<PointCloud> comps{b.cloud, a.cloud};
  const BevMixture mix(a.cloud, comps);
  const auto params = balanced_params(5);
  std::vector<double> factors{0.4, 0.7};
  auto conf = [&](const std::vector<double>& f) {
    return feature_confidence_gradient(mix.features(f), params, a.gt, 0.0).confidence;
  };
  const auto fg = feature_confidence_gradient(mix.features(factors), params, a.gt, 0.0);
  REQUIRE(fg.matched);
  const auto grad = mix.factor_gradient(factors, fg.d_features);
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const double fd = oracle::central_difference(
        [&](double x) {
          auto f = factors;
          f[k] = x;
          return conf(f);
        },
        factors[k], 1e-5);
    CHECK(oracle::relative_error(grad[k], fd, 1e-7) < 1e-3);
  }
}

TEST_CASE("scene loss gradient matches central differences on parameters") {
  const auto sc = small_scene();
  const auto f = featurize(sc.cloud);
  const auto params = balanced_params(11);
  const TrainHyper hyper;
  for (const auto& gt : {std::optional<Box3D>(sc.gt), std::optional<Box3D>()}) {
    std::vector<double> grad;
    scene_loss(f, gt, params, hyper, &grad);
    REQUIRE(grad.size() == DetectorParams::kTotal);
    std::mt19937_64 gen(17);
    std::uniform_int_distribution<std::size_t> pick(0, DetectorParams::kTotal - 1);
    int probed = 0, good = 0;
    for (int k = 0; k < 120; ++k) {
      const std::size_t i = pick(gen);
      const double fd = oracle::central_difference(
          [&](double v) {
            DetectorParams p = params;
            p.values[i] = v;
            return scene_loss(f, gt, p, hyper, nullptr);
          },
          params.values[i], 1e-6);
      ++probed;
      good += oracle::relative_error(grad[i], fd, 1e-8) < 1e-3;
    }
    CHECK(good >= 0.95 * probed);
  }
}

TEST_CASE("training on a toy sampler lowers the loss") {
  struct ToySampler : SceneSampler {
    TrainingScene make(std::uint64_t index) const {
      Rng rng(derive_seed({index, 99}));
      TrainingScene s;
      const Vec3 c(rng.uniform(5.0, 30.0), rng.uniform(-10.0, 10.0), 0.0);
      const bool positive = index % 2 == 0;
      const double h = positive ? 1.7 : 0.5;
      for (int k = 0; k < 60; ++k) {
        const Vec3 p = c + Vec3(rng.uniform(-0.15, 0.15), rng.uniform(-0.3, 0.3), rng.uniform(0.1, h));
        s.cloud.points.push_back({p, 0.4, 1.0});
      }
      if (positive) {
        Box3D b;
        b.center = c + Vec3(0, 0, 0.875);
        b.size = Vec3(0.3, 0.6, 1.75);
        b.yaw = std::atan2(c.y(), c.x()) + std::numbers::pi;
        s.gt = b;
      }
      return s;
    }
    TrainingScene sample(std::uint64_t i) const override { return make(i); }
    TrainingScene held_out(std::uint64_t i) const override { return make(2 * i + 100000); }
  };
  TrainHyper hyper;
  hyper.epochs = 4;
  hyper.held_out_scenes = 10;
  hyper.learning_rate = 3e-3;
  const auto r = train(ToySampler{}, 64, hyper);
  REQUIRE(r.epoch_loss.size() == 4);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  CHECK(r.params.finite());
  const auto again = train(ToySampler{}, 64, hyper);
  CHECK(again.params.values == r.params.values);
}

TEST_CASE("params binary and metadata round trip") {
  const auto dir = fs::temp_directory_path() / "advforge_tests_params";
  fs::create_directories(dir);
  auto params = random_params(21, 0.5);
  ParamsMetadata meta;
  meta.seed = 21;
  meta.n_scenes = 123;
  meta.held_out_dsr = 91.5;
  save_params(params, meta, dir / "p.bin");
  CHECK(fs::exists(dir / "p.bin.json"));
  ParamsMetadata back_meta;
  const auto back = load_params(dir / "p.bin", &back_meta);
  params.round_to_float();
  CHECK(back.values == params.values);
  CHECK(back_meta.n_scenes == 123);
  CHECK(back_meta.held_out_dsr == 91.5);

  // Wrong magic and truncation are rejected.
  {
    std::fstream f(dir / "p.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_params(dir / "p.bin"), Error);
  save_params(params, meta, dir / "p.bin");
  fs::resize_file(dir / "p.bin", fs::file_size(dir / "p.bin") - 4);
  CHECK_THROWS_AS(load_params(dir / "p.bin"), Error);
}
