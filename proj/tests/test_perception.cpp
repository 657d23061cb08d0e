#include "support.hpp"

#include "bronchonav/perception.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace bronchonav;

namespace {

const AirwayTree& depth5_tree() {
  static const AirwayTree tree = generate_tree(TreeGenConfig{.depth = 5, .seed = 8});
  return tree;
}

// Random camera inside a random airway, roughly looking distally.
Pose random_inner_pose(const AirwayTree& tree, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, tree.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const Airway& a = tree.airway(pick(rng));
  const Eigen::Vector3d at = a.proximal() + u(rng) * (a.distal() - a.proximal());
  const Eigen::Vector3d jitter(n(rng), n(rng), n(rng));
  const Eigen::Vector3d dir = ((a.distal() - a.proximal()).normalized() + 0.25 * jitter).normalized();
  return look_along(at, dir, Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized());
}

ObservationRow truth_row(const AirwayGroundTruth& g) {
  ObservationRow r;
  r.p_is_vis = g.is_vis ? 1.0 : 0.0;
  r.p_has_vis_child = g.has_vis_child ? 1.0 : 0.0;
  if (g.is_vis) {
    r.y_p = g.y_p;
    r.y_d = g.y_d;
  }
  return r;
}

ObservationMatrix perfect(const std::vector<AirwayGroundTruth>& truth) {
  ObservationMatrix m(static_cast<int>(truth.size()));
  for (std::size_t i = 0; i < truth.size(); ++i) m.rows[i] = truth_row(truth[i]);
  return m;
}

}  // namespace

TEST_CASE("zero-noise oracle reproduces the trachea view") {
  const AirwayTree tree = testing::straight_tree(25.0);
  Rng rng(1);
  const ObservationMatrix obs = oracle_airwaynet(Pose{}, tree, VisibilityConfig{}, NoiseConfig{}, rng);
  REQUIRE(obs.size() >= 1);
  CHECK(obs[0].p_is_vis == 1.0);
  CHECK(obs[0].p_has_vis_child == 0.0);
  CHECK((obs[0].y_p - Eigen::Vector3d(0, 0, 25)).norm() < 1e-9);
  CHECK(obs[0].y_d.norm() < 1e-12);
}

TEST_CASE("zero-noise oracle thresholds to ground truth") {
  const AirwayTree& tree = depth5_tree();
  const VisibilityConfig vis;
  std::mt19937_64 poses(17);
  Rng a(1), b(99);
  for (int n = 0; n < 100; ++n) {
    const Pose pose = random_inner_pose(tree, poses);
    const auto truth = ground_truth_observation(pose, vis, tree);
    const ObservationMatrix obs = oracle_airwaynet(pose, tree, vis, NoiseConfig{}, a);
    for (const auto& g : truth) {
      REQUIRE((obs[g.airway_id].p_is_vis >= 0.5) == g.is_vis);
      REQUIRE((obs[g.airway_id].p_has_vis_child >= 0.5) == g.has_vis_child);
    }
    // Pure function of the pose: the RNG stream does not matter.
    REQUIRE(oracle_airwaynet(pose, tree, vis, NoiseConfig{}, b) == obs);
    REQUIRE(oracle_bifurcationnet(pose, tree, vis, NoiseConfig{}, a) ==
            oracle_bifurcationnet(pose, tree, vis, NoiseConfig{}, b));
  }
}

TEST_CASE("position noise has the chi mean") {
  const AirwayTree tree = testing::straight_tree(25.0);
  const auto truth = ground_truth_observation(Pose{}, VisibilityConfig{}, tree);
  NoiseConfig noise;
  noise.sigma_pos = 1.0;
  Rng rng(2024);
  double sum = 0.0;
  constexpr int kSamples = 10000;
  for (int i = 0; i < kSamples; ++i) {
    sum += (oracle_airwaynet(truth, tree, noise, rng)[0].y_p - truth[0].y_p).norm();
  }
  const double expected = std::sqrt(8.0 / std::numbers::pi) * noise.sigma_pos;
  CHECK(sum / kSamples == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("dropout and swaps") {
  const AirwayTree& tree = depth5_tree();
  const VisibilityConfig vis;
  std::mt19937_64 poses(23);

  SUBCASE("p_miss = 1 hides every airway") {
    NoiseConfig noise;
    noise.p_miss = 1.0;
    Rng rng(3);
    for (int n = 0; n < 50; ++n) {
      const ObservationMatrix obs = oracle_airwaynet(random_inner_pose(tree, poses), tree, vis, noise, rng);
      for (const auto& row : obs.rows) REQUIRE(row.p_is_vis < 0.5);
    }
  }

  SUBCASE("swaps stay between siblings") {
    NoiseConfig noise;
    noise.p_swap = 1.0;
    Rng rng(4);
    int swapped = 0;
    for (int n = 0; n < 200; ++n) {
      const Pose pose = random_inner_pose(tree, poses);
      const auto truth = ground_truth_observation(pose, vis, tree);
      const ObservationMatrix obs = oracle_airwaynet(truth, tree, noise, rng, &pose);
      for (const auto& g : truth) {
        auto same = [](const ObservationRow& a, const ObservationRow& b) {
          return (a.p_is_vis >= 0.5) == (b.p_is_vis >= 0.5) &&
                 (a.p_has_vis_child >= 0.5) == (b.p_has_vis_child >= 0.5) && (a.y_p - b.y_p).norm() < 1e-9 &&
                 (a.y_d - b.y_d).norm() < 1e-9;
        };
        if (same(obs[g.airway_id], truth_row(g))) continue;
        ++swapped;
        bool from_sibling = false;
        for (const auto& h : truth) {
          if (generation_distance(tree, g.airway_id, h.airway_id) == 2 &&
              tree.airway(g.airway_id).parent == tree.airway(h.airway_id).parent &&
              same(obs[g.airway_id], truth_row(h))) {
            from_sibling = true;
          }
        }
        REQUIRE(from_sibling);
      }
    }
    CHECK(swapped > 0);
  }
}

TEST_CASE("unlabeled rows") {
  const VisibilityConfig vis;
  Rng rng(1);

  SUBCASE("two visible children give two rows") {
    const AirwayTree tree = testing::y_tree(60.0, 30.0, 0.4);
    const Pose past_carina = look_along({0, 0, 62}, {0, 0, 1});
    const auto truth = ground_truth_observation(past_carina, vis, tree);
    REQUIRE_FALSE(truth[0].is_vis);
    REQUIRE(truth[1].is_vis);
    REQUIRE(truth[2].is_vis);
    CHECK(oracle_bifurcationnet(truth, tree, NoiseConfig{}, rng).rows.size() == 2);
  }

  SUBCASE("crowded view keeps the four smallest keys") {
    const AirwayTree& tree = depth5_tree();
    std::mt19937_64 poses(31);
    int crowded = 0;
    for (int n = 0; n < 4000 && crowded < 20; ++n) {
      const Pose pose = random_inner_pose(tree, poses);
      const auto truth = ground_truth_observation(pose, vis, tree);
      std::vector<std::pair<std::pair<double, double>, AirwayId>> keyed;
      for (const auto& g : truth) {
        if (g.is_vis) keyed.push_back({ordering_key(truth_row(g)), g.airway_id});
      }
      if (keyed.size() < 6) continue;
      bool ambiguous = false;
      for (const auto& a : truth) {
        for (const auto& b : truth) {
          if (a.is_vis && b.is_vis && a.airway_id != b.airway_id && (a.y_p - b.y_p).norm() < 1.0) ambiguous = true;
        }
      }
      if (ambiguous) continue;
      ++crowded;
      std::sort(keyed.begin(), keyed.end());
      const UnlabeledObservation obs = oracle_bifurcationnet(truth, tree, NoiseConfig{}, rng);
      REQUIRE(obs.rows.size() == 4);
      std::vector<AirwayId> reattached;
      for (int k = 0; k < 4; ++k) {
        CHECK(obs.rows[k] == truth_row(truth[keyed[k].second]));
        // Re-attach IDs by nearest y_p.
        AirwayId best = -1;
        double best_d = 1e300;
        for (const auto& g : truth) {
          if (!g.is_vis) continue;
          const double d = (g.y_p - obs.rows[k].y_p).norm();
          if (d < best_d) {
            best_d = d;
            best = g.airway_id;
          }
        }
        reattached.push_back(best);
      }
      for (int k = 0; k < 4; ++k) CHECK(reattached[k] == keyed[k].second);
    }
    CHECK(crowded > 0);
  }
}

TEST_CASE("loss values") {
  const LossWeights w;

  SUBCASE("perfect prediction") {
    const AirwayTree& tree = depth5_tree();
    std::mt19937_64 poses(5);
    for (int n = 0; n < 20; ++n) {
      const auto truth = ground_truth_observation(random_inner_pose(tree, poses), VisibilityConfig{}, tree);
      CHECK(airwaynet_loss(perfect(truth), truth, w) == 0.0);
    }
  }

  SUBCASE("one millimetre error at 10 mm") {
    AirwayGroundTruth g;
    g.is_vis = true;
    g.y_p = {0, 0, 10};
    ObservationMatrix pred = perfect({g});
    pred.rows[0].y_p.z() += 1.0;
    const double f = std::max(0.1, 6.0 - 0.2 * 10.0);
    CHECK(f == 4.0);
    CHECK(std::abs(airwaynet_loss(pred, {g}, w) - f * 1.0 * 1.0) < 1e-12);
  }

  SUBCASE("depth weight floor") {
    CHECK(std::abs(depth_weight({0, 0, 30}, w) - 0.1) < 1e-12);
    CHECK(std::abs(depth_weight({0, 18, 24}, w) - 0.1) < 1e-12);
    CHECK(depth_weight({0, 0, 5}, w) == doctest::Approx(5.0));
  }

  SUBCASE("near errors cost more") {
    auto loss_at = [&](double depth) {
      AirwayGroundTruth g;
      g.is_vis = true;
      g.y_p = {0, 0, depth};
      ObservationMatrix pred = perfect({g});
      pred.rows[0].y_p.x() += 1.0;
      return airwaynet_loss(pred, {g}, w);
    };
    CHECK(loss_at(5.0) == doctest::Approx(5.0));
    CHECK(loss_at(25.0) == doctest::Approx(1.0));
  }

  SUBCASE("monotone in regression error") {
    AirwayGroundTruth g;
    g.is_vis = true;
    g.y_p = {1, 2, 12};
    g.y_d = {0.1, -0.2};
    double prev = -1.0;
    for (double e = 0.0; e <= 3.0; e += 0.25) {
      ObservationMatrix pred = perfect({g});
      pred.rows[0].y_p += Eigen::Vector3d(e, -e, 0.5 * e);
      pred.rows[0].y_d += Eigen::Vector2d(0.1 * e, 0.0);
      const double l = airwaynet_loss(pred, {g}, w);
      CHECK(l >= prev);
      prev = l;
    }
  }

  SUBCASE("probabilities out of range") {
    AirwayGroundTruth g;
    ObservationMatrix pred(1);
    pred.rows[0].p_is_vis = 1.5;
    CHECK_THROWS_AS(airwaynet_loss(pred, {g}, w), Error);
  }
}

TEST_CASE("threshold sweep") {
  const std::vector<double> half{0.5};

  SUBCASE("toy log with one false positive and one false negative") {
    std::vector<LabeledFrame> frames(4);
    const double scores[] = {0.9, 0.8, 0.2, 0.7};
    const char visible[] = {1, 1, 1, 0};
    for (int i = 0; i < 4; ++i) frames[i] = {{scores[i]}, {visible[i]}};
    const ThresholdSweep sweep = score_threshold_sweep(frames, half);
    REQUIRE(sweep.airways.size() == 1);
    const AirwayCurve& c = sweep.airways[0];
    CHECK(c.tp[0] == 2);
    CHECK(c.fp[0] == 1);
    CHECK(c.fn[0] == 1);
    CHECK(c.precision[0] == doctest::Approx(2.0 / 3.0));
    CHECK(c.recall[0] == doctest::Approx(2.0 / 3.0));
  }

  SUBCASE("all-zero predictions") {
    std::vector<LabeledFrame> frames{{{0.0, 0.0}, {1, 1}}, {{0.0, 0.0}, {1, 0}}};
    const std::vector<double> grid{0.01, 0.3, 0.9};
    for (const AirwayCurve& c : score_threshold_sweep(frames, grid).airways) {
      for (double r : c.recall) CHECK(r == 0.0);
    }
  }

  SUBCASE("zero-noise oracle sequence") {
    const AirwayTree& tree = depth5_tree();
    const VisibilityConfig vis;
    std::mt19937_64 poses(41);
    Rng rng(1);
    std::vector<ObservationMatrix> preds;
    std::vector<std::vector<AirwayGroundTruth>> truths;
    for (int n = 0; n < 100; ++n) {
      const Pose pose = random_inner_pose(tree, poses);
      truths.push_back(ground_truth_observation(pose, vis, tree));
      preds.push_back(oracle_airwaynet(truths.back(), tree, NoiseConfig{}, rng));
    }
    const ThresholdSweep sweep = score_threshold_sweep(preds, truths, half);
    CHECK_FALSE(sweep.airways.empty());
    for (const AirwayCurve& c : sweep.airways) {
      CHECK(c.support > 0);
      CHECK(c.precision[0] == 1.0);
      CHECK(c.recall[0] == 1.0);
    }
  }
}

TEST_CASE("noise config parsing") {
  const NoiseConfig n = noise_config_from_json(R"({"sigma_pos": 1.0, "p_miss": 0.02, "seed": 11})");
  CHECK(n.sigma_pos == 1.0);
  CHECK(n.p_miss == 0.02);
  CHECK(n.seed == 11);
  CHECK_THROWS_AS(noise_config_from_json(R"({"p_miss": 2})"), Error);
  CHECK_THROWS_AS(noise_config_from_json(R"({"sigma": 1})"), Error);
}
