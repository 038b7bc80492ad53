#include <numeric>
#include <random>

#include "advforge/adversarial.hpp"
#include "advforge/error.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace advforge;

namespace {

Vocabulary small_vocab() {
  Vocabulary v;
  v.verbs = {"carry", "hold"};
  v.objects = {"ladder", "chair"};
  v.poses = {"on the back", "in front of the body"};
  return v;
}

ScenarioConfig small_scenario() {
  ScenarioConfig s;
  s.env = make_environment("open_lot", 0);
  s.distance = 9.0;
  s.angle_deg = 5.0;
  s.lidar.beams = 32;
  return s;
}

DetectorParams balanced_params(std::uint64_t seed) {
  auto p = DetectorParams::initial(seed);
  p.values[DetectorParams::kTotal - DetectorParams::kBh] = 0.0;
  return p;
}

const RenderCache& small_cache() {
  static const RenderCache cache(small_vocab(), default_object_pool(), small_scenario(), build_pedestrian_template());
  return cache;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gumbel-Softmax
// ---------------------------------------------------------------------------

TEST_CASE("uniform logits at unit temperature give uniform mean weights") {
  Rng rng(1);
  const std::vector<double> logits(5, 0.0);
  std::vector<double> mean(5, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto y = gumbel_softmax(logits, 1.0, rng);
    for (std::size_t k = 0; k < 5; ++k) mean[k] += y[k] / n;
  }
  for (double m : mean) CHECK(std::abs(m - 0.2) < 0.01);
}

TEST_CASE("low temperature sharpness follows the law of the top Gumbel gap") {
  // A relaxed sample has max > 0.99 iff sum_{i != top} exp(-(gap_i) / tau) < 1/99.
  // The fraction is a property of the Gumbel distribution, estimated here
  // with an independent generator.
  const double tau = 0.01;
  for (const std::vector<double>& logits : {std::vector<double>(5, 0.0), std::vector<double>{0.3, -0.2, 0.0, 1.0, 0.5}}) {
    Rng rng(2);
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> u(std::nextafter(0.0, 1.0), 1.0);
    const int n = 100000;
    int sharp = 0, ref = 0;
    for (int i = 0; i < n; ++i) {
      const auto y = gumbel_softmax(logits, tau, rng);
      sharp += *std::max_element(y.begin(), y.end()) > 0.99;
      std::vector<double> z(logits.size());
      for (std::size_t k = 0; k < z.size(); ++k) z[k] = logits[k] - std::log(-std::log(u(gen)));
      const double top = *std::max_element(z.begin(), z.end());
      double rest = 0.0;
      for (double v : z) rest += v == top ? 0.0 : std::exp((v - top) / tau);
      ref += rest < 1.0 / 99.0;
    }
    CHECK(std::abs(sharp - ref) / double(n) < 0.006);
    // Uniform logits: about 99^-tau of the samples, roughly 95.5%.
    if (logits[0] == logits[1]) CHECK(sharp / double(n) == doctest::Approx(std::pow(99.0, -tau)).epsilon(0.01));
  }
}

TEST_CASE("low temperature argmax frequencies follow the softmax of the logits") {
  Rng rng(3);
  const std::vector<double> logits{0.0, std::log(2.0), std::log(5.0)};
  std::vector<int> wins(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto y = gumbel_softmax(logits, 0.01, rng);
    ++wins[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())];
  }
  CHECK(wins[0] / double(n) == doctest::Approx(0.125).epsilon(0.05));
  CHECK(wins[1] / double(n) == doctest::Approx(0.25).epsilon(0.05));
  CHECK(wins[2] / double(n) == doctest::Approx(0.625).epsilon(0.05));
}

TEST_CASE("shifting every logit leaves the relaxed sample unchanged at fixed noise") {
  // Dyadic values keep every sum exact, so the outputs must be bit-identical.
  const std::vector<double> logits{0.25, -1.5, 0.75, 2.0};
  const std::vector<double> noise{0.125, 0.5, -0.375, -0.0625};
  for (double shift : {1.0, -3.0, 64.0}) {
    std::vector<double> moved = logits;
    for (auto& l : moved) l += shift;
    for (double tau : {1.0, 0.5, 0.125}) CHECK(gumbel_softmax(moved, tau, noise) == gumbel_softmax(logits, tau, noise));
  }
  // Arbitrary values: equal to rounding.
  std::mt19937_64 gen(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> l(7), z(7);
  for (auto& x : l) x = g(gen);
  for (auto& x : z) x = g(gen);
  auto moved = l;
  for (auto& x : moved) x += 0.37;
  const auto a = gumbel_softmax(l, 0.3, z), b = gumbel_softmax(moved, 0.3, z);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("gumbel softmax backward matches central differences") {
  const std::vector<double> logits{0.1, -0.4, 0.7};
  const std::vector<double> noise{0.2, 0.05, -0.3};
  const std::vector<double> dy{1.0, -2.0, 0.5};
  const double tau = 0.7;
  const auto y = gumbel_softmax(logits, tau, noise);
  const auto d = gumbel_softmax_backward(y, dy, tau);
  for (std::size_t k = 0; k < 3; ++k) {
    const double fd = oracle::central_difference(
        [&](double x) {
          auto l = logits;
          l[k] = x;
          const auto yy = gumbel_softmax(l, tau, noise);
          return std::inner_product(yy.begin(), yy.end(), dy.begin(), 0.0);
        },
        logits[k], 1e-6);
    CHECK(oracle::relative_error(d[k], fd) < 1e-6);
  }
  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, noise), Error);
}

TEST_CASE("triplet weights are the normalised outer product in enumeration order") {
  Rng rng(5);
  MixtureLogits ml = MixtureLogits::zeros(small_vocab());
  ml.logits[kVerb] = {0.3, -0.3};
  ml.logits[kObject] = {1.0, 0.0};
  ml.logits[kPose] = {-0.5, 0.2};
  const auto tw = triplet_weights(ml, rng);
  const auto all = enumerate_triplets(small_vocab());
  REQUIRE(tw.w.size() == all.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const double ref = tw.component[kVerb][all[i].verb] * tw.component[kObject][all[i].object] *
                       tw.component[kPose][all[i].pose];
    CHECK(tw.w[i] == doctest::Approx(ref).epsilon(1e-12));
    sum += tw.w[i];
  }
  CHECK(sum == doctest::Approx(1.0));
  // Fresh generator with the same seed replays the draw.
  Rng again(5);
  CHECK(triplet_weights(ml, again).w == tw.w);
}

// ---------------------------------------------------------------------------
// Loss law
// ---------------------------------------------------------------------------

TEST_CASE("adversarial loss is floored, gated and equal to direct enumeration") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 1.0), off(-1.0, 1.0);
  std::uniform_int_distribution<int> count(0, 12);
  Box3D gt;
  gt.center = Vec3(10, 0, 0.9);
  gt.size = Vec3(0.6, 0.8, 1.75);
  const double delta = 0.5, eta = 0.1;
  int gated_out = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<Detection> dets(static_cast<std::size_t>(count(gen)));
    for (auto& d : dets) {
      d.box = gt;
      d.box.center += Vec3(0.5 * off(gen), 0.5 * off(gen), 0.2 * off(gen));
      d.box.yaw = off(gen);
      d.confidence = u(gen);
    }
    const double loss = adv_loss(dets, gt, delta, eta);
    // Enumerate the definition directly.
    double ref = eta;
    bool any = false;
    for (const auto& d : dets) {
      if (iou3d(d.box, gt) > delta) {
        any = true;
        ref = std::max(ref, d.confidence);
      }
    }
    CHECK(loss >= eta);
    CHECK(loss == ref);
    if (!any) {
      ++gated_out;
      CHECK(loss == eta);
    }
  }
  CHECK(gated_out > 100);
  CHECK(adv_loss({}, gt) == kDefaultLossFloor);
}

// ---------------------------------------------------------------------------
// Render cache and losses
// ---------------------------------------------------------------------------

TEST_CASE("cached hard clouds equal fresh renders") {
  const auto& cache = small_cache();
  const auto params = balanced_params(1);
  const auto all = enumerate_triplets(cache.vocab());
  REQUIRE(cache.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto cached = cache.hard_cloud(i);
    const auto fresh = render_triplet(all[i], cache.vocab(), cache.pool(), cache.scenario(), cache.pedestrian());
    REQUIRE(cached.size() == fresh.size());
    auto key = [](const CloudPoint& p) { return std::array<double, 4>{p.position.x(), p.position.y(), p.position.z(), p.intensity}; };
    std::vector<std::array<double, 4>> a, b;
    for (const auto& p : cached.points) a.push_back(key(p));
    for (const auto& p : fresh.points) b.push_back(key(p));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(hard_loss(cached, cache.gt(), params, 0.0, 0.0) == hard_loss(fresh, cache.gt(), params, 0.0, 0.0));
  }
}

TEST_CASE("soft loss at a one-hot mixture equals the hard loss of that triplet") {
  const auto& cache = small_cache();
  const auto params = balanced_params(2);
  const auto all = enumerate_triplets(cache.vocab());
  LossSettings st;
  st.delta = 0.0;
  st.eta = 0.0;
  MixtureNoise zero{std::vector<double>(2, 0.0), std::vector<double>(2, 0.0), std::vector<double>(2, 0.0)};
  for (std::size_t i = 0; i < all.size(); ++i) {
    MixtureLogits ml = MixtureLogits::zeros(cache.vocab());
    ml.logits[kVerb][all[i].verb] = 2000.0;
    ml.logits[kObject][all[i].object] = 2000.0;
    ml.logits[kPose][all[i].pose] = 2000.0;
    const auto soft = soft_scene_loss(ml, cache, params, zero, st);
    CHECK(soft.weights.w[i] == 1.0);
    const double hard = hard_loss(cache.hard_cloud(i), cache.gt(), params, st.delta, st.eta);
    CHECK(std::abs(soft.loss - hard) < 1e-4);
  }
}

TEST_CASE("soft loss logit gradient matches central differences") {
  const auto& cache = small_cache();
  const auto params = balanced_params(3);
  LossSettings st;
  st.delta = 0.0;
  st.eta = 0.0;
  int probed = 0, good = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    MixtureLogits ml = MixtureLogits::zeros(cache.vocab());
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> g(0.0, 0.5);
    for (auto& comp : ml.logits)
      for (auto& l : comp) l = g(gen);
    ml.temperature = 0.5;
    const auto noise = draw_mixture_noise(ml, rng);
    const auto s = soft_scene_loss(ml, cache, params, noise, st);
    REQUIRE(s.matched);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < ml.logits[c].size(); ++k) {
        const double fd = oracle::central_difference(
            [&](double x) {
              MixtureLogits m = ml;
              m.logits[c][k] = x;
              return soft_scene_loss(m, cache, params, noise, st).loss;
            },
            ml.logits[c][k], 1e-3);
        ++probed;
        good += oracle::relative_error(s.gradient[c][k], fd, 1e-8) < 1e-3;
      }
    }
  }
  INFO("probed " << probed << " good " << good);
  CHECK(good >= 0.95 * probed);
}

TEST_CASE("pinned components receive no gradient") {
  const auto& cache = small_cache();
  LossSettings st;
  st.delta = 0.0;
  st.eta = 0.0;
  st.fixed[kObject] = 1;
  st.fixed[kPose] = 0;
  Rng rng(1);
  const auto s = soft_scene_loss(MixtureLogits::zeros(cache.vocab()), cache, balanced_params(3), rng, st);
  for (double g : s.gradient[kObject]) CHECK(g == 0.0);
  for (double g : s.gradient[kPose]) CHECK(g == 0.0);
  CHECK(s.weights.component[kObject] == std::vector<double>{0.0, 1.0});
}

TEST_CASE("exhaustive search returns the argmin of the per-triplet hard losses") {
  const auto& cache = small_cache();
  const auto params = balanced_params(4);
  const auto ex = exhaustive_search(cache, params, 0.0, 0.0);
  REQUIRE(ex.losses.size() == cache.size());
  const auto all = enumerate_triplets(cache.vocab());
  const auto best = static_cast<std::size_t>(std::min_element(ex.losses.begin(), ex.losses.end()) - ex.losses.begin());
  CHECK(ex.best == all[best]);
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(ex.losses[i] == hard_loss(cache.hard_cloud(i), cache.gt(), params, 0.0, 0.0));
  }
  Vocabulary huge = default_vocabulary();
  for (int i = 0; i < 40; ++i) huge.objects.push_back(huge.objects[static_cast<std::size_t>(i % 13)] + std::to_string(i));
  CHECK_THROWS_AS(exhaustive_search(huge, default_object_pool(), small_scenario(), params), Error);
}

TEST_CASE("optimisation is deterministic in the seed and records every step") {
  const auto& cache = small_cache();
  const auto params = balanced_params(5);
  AttackHyper h;
  h.steps = 15;
  h.seed = 9;
  h.learning_rate = 0.05;
  const auto a = optimize(cache, params, h);
  const auto b = optimize(cache, params, h);
  REQUIRE(a.steps.size() == 15);
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].loss == b.steps[i].loss);
    CHECK(a.steps[i].argmax == b.steps[i].argmax);
  }
  CHECK(a.triplet == b.triplet);
  CHECK(a.hard_loss == b.hard_loss);
  CHECK(a.steps.front().tau == doctest::Approx(h.tau_start));
  CHECK(a.steps.back().tau == doctest::Approx(h.tau_end));
  CHECK(a.prompt == concat_prompt(a.triplet, cache.vocab()));
  CHECK(a.hard_loss == hard_loss(cache.hard_cloud(triplet_index(a.triplet, cache.vocab())), cache.gt(), params, h.delta, h.eta));
}

TEST_CASE("ablation modes pin the expected components") {
  const auto& cache = small_cache();
  const auto params = balanced_params(6);
  AttackHyper h;
  h.steps = 5;
  h.mode = AblationMode::kRandom;
  const auto r = optimize(cache, params, h);
  CHECK(r.steps.empty());
  h.mode = AblationMode::kVerbOnly;
  const auto v = optimize(cache, params, h);
  for (const auto& s : v.steps) {
    CHECK(s.argmax.object == v.triplet.object);
    CHECK(s.argmax.pose == v.triplet.pose);
  }
  CHECK(parse_ablation_mode("verb_object") == AblationMode::kVerbObject);
  CHECK(to_string(AblationMode::kFull) == "full");
  CHECK_THROWS_AS(parse_ablation_mode("everything"), Error);
  AttackHyper bad;
  bad.tau_end = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
