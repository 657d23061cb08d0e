#include "support.hpp"

#include "bronchonav/localization.hpp"
#include "bronchonav/simulator.hpp"

#include <doctest.h>

#include <random>

using namespace bronchonav;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const AirwayTree& depth5_tree() {
  static const AirwayTree tree = generate_tree(TreeGenConfig{.depth = 5, .seed = 8});
  return tree;
}

// Camera inside an airway with a non-leaf, looking at its bifurcation.
Pose random_bifurcation_pose(const AirwayTree& tree, std::mt19937_64& rng) {
  const auto& bifs = tree.bifurcations();
  std::uniform_int_distribution<std::size_t> pick(0, bifs.size() - 1);
  std::uniform_real_distribution<double> back(8.0, 22.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const AirwayId id = bifs[pick(rng)];
  const Eigen::Vector3d axis = tree.distal_direction(id);
  const Eigen::Vector3d at = tree.airway(id).distal() - back(rng) * axis;
  const Eigen::Vector3d dir = (axis + 0.1 * Eigen::Vector3d(n(rng), n(rng), n(rng))).normalized();
  return look_along(at, dir, Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized());
}

struct CameraDirections {
  Eigen::Vector3d parent;
  std::vector<Eigen::Vector3d> children;
};

CameraDirections skeleton_directions(const AirwayTree& tree, AirwayId parent, const Pose& pose) {
  CameraDirections d;
  d.parent = pose.rotation.transpose() * tree.distal_direction(parent);
  for (AirwayId c : tree.airway(parent).children) {
    d.children.push_back(pose.rotation.transpose() * tree.proximal_direction(c));
  }
  return d;
}

}  // namespace

TEST_CASE("consistent bifurcation in a labeled matrix") {
  const AirwayTree tree = testing::y_tree();
  const Pose cam = look_along({0, 0, 40}, {0, 0, 1});
  Rng rng(1);
  ObservationMatrix obs = oracle_airwaynet(cam, tree, VisibilityConfig{}, NoiseConfig{}, rng);

  const auto match = find_consistent_bifurcation(obs, tree);
  REQUIRE(match);
  CHECK(match->parent_id == 0);
  CHECK(match->child_ids == std::vector<AirwayId>{1, 2});

  ObservationMatrix one_child = obs;
  one_child[2].p_is_vis = 0.1;
  CHECK_FALSE(find_consistent_bifurcation(one_child, tree));

  CHECK_FALSE(find_consistent_bifurcation(ObservationMatrix(tree.max_rows()), tree));
}

TEST_CASE("pose alignment recovers the camera exactly") {
  const AirwayTree& tree = depth5_tree();
  const VisibilityConfig vis;
  std::mt19937_64 rng(7);
  Rng oracle_rng(1);
  int aligned = 0;
  for (int n = 0; n < 1000; ++n) {
    const Pose truth = random_bifurcation_pose(tree, rng);
    const auto est = localize_airwaynet(oracle_airwaynet(truth, tree, vis, NoiseConfig{}, oracle_rng), tree);
    if (!est) continue;
    ++aligned;
    const PoseErrors e = pose_errors(truth, est->pose);
    REQUIRE(e.position < 1e-6);
    REQUIRE(e.direction < 1e-6);
    REQUIRE(e.roll < 1e-6);
  }
  CHECK(aligned > 500);
}

TEST_CASE("pose alignment under direction noise") {
  const AirwayTree& tree = depth5_tree();
  const VisibilityConfig vis;
  NoiseConfig noise;
  noise.sigma_dir = 0.02;
  std::mt19937_64 rng(9);
  Rng oracle_rng(2);
  int trials = 0, within = 0;
  while (trials < 1000) {
    const Pose truth = random_bifurcation_pose(tree, rng);
    const auto truth_obs = ground_truth_observation(truth, vis, tree);
    const auto est = localize_airwaynet(oracle_airwaynet(truth_obs, tree, noise, oracle_rng, &truth), tree);
    if (!est || est->match.parent_id != visible_bifurcation(truth_obs, tree)) continue;
    ++trials;
    if (pose_errors(truth, est->pose).direction < 5.0) ++within;
  }
  CHECK(within >= 950);
}

TEST_CASE("collinear directions cannot be aligned") {
  const AirwayTree tree = testing::y_tree();
  BifurcationMatch m;
  m.parent_id = 0;
  m.child_ids = {1, 2};
  m.obs_parent.y_p = {0, 0, 20};
  ObservationRow child;
  child.y_p = {0, 0, 25};
  m.obs_children = {child, child};
  m.bif_point_cam = {0, 0, 20};
  CHECK_THROWS_AS(align_pose(m, tree), Error);
}

TEST_CASE("fit probability") {
  const AirwayTree& tree = depth5_tree();
  const double sigma = 0.1;
  const double peak = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  std::mt19937_64 rng(13);

  for (int n = 0; n < 50; ++n) {
    const Pose pose = random_bifurcation_pose(tree, rng);
    const AirwayId parent = tree.nearest_centerline(pose.position).airway;
    if (tree.airway(parent).children.size() < 2) continue;
    const CameraDirections d = skeleton_directions(tree, parent, pose);

    const FitResult exact = fit_probability(d.parent, d.children, parent, tree, sigma);
    CHECK(exact.p_fit == doctest::Approx(peak).epsilon(1e-9));
    CHECK(exact.assignment == tree.airway(parent).children);

    std::vector<Eigen::Vector3d> swapped(d.children.rbegin(), d.children.rend());
    const FitResult sw = fit_probability(d.parent, swapped, parent, tree, sigma);
    CHECK(std::abs(sw.p_fit - exact.p_fit) < 1e-9);

    // A global roll about the parent axis is absorbed by the roll search.
    const Eigen::Matrix3d roll = axis_angle(d.parent, 1.1);
    std::vector<Eigen::Vector3d> rolled;
    for (const auto& c : d.children) rolled.push_back(roll * c);
    CHECK(std::abs(fit_probability(d.parent, rolled, parent, tree, sigma).p_fit - exact.p_fit) < 1e-9);
  }

  SUBCASE("children ninety degrees off") {
    const Eigen::Vector3d carina(0, 0, 60);
    const AirwayTree tee({testing::make_airway(0, std::nullopt, {1, 2}, {{0, 0, 0}, carina}, 9.0),
                          testing::make_airway(1, 0, {}, {carina, carina + Eigen::Vector3d(-20, 0, 0)}, 6.0),
                          testing::make_airway(2, 0, {}, {carina, carina + Eigen::Vector3d(20, 0, 0)}, 6.0)},
                         0);
    const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
    const FitResult off = fit_probability(z, {z, z}, 0, tee, sigma);
    CHECK(off.p_fit < 1e-8);
    CHECK(off.p_fit == doctest::Approx(peak * std::exp(-0.5 / (sigma * sigma))).epsilon(1e-6));
  }
}

TEST_CASE("generation prior table") {
  CHECK(p_gen(1) == 1.0);
  CHECK(p_gen(2) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(p_gen(3) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(p_gen(4) == 0.0);
  CHECK(p_gen(7) == 0.0);
}

TEST_CASE("prior terms") {
  const AirwayTree& tree = depth5_tree();
  FilterState state;
  const AirwayId cand = tree.bifurcations()[3];
  const double y_pz = 12.0;
  const double u_ins = tree.z_bif(cand) - y_pz;
  const PriorTerms p = prior_probability(cand, tree, u_ins, y_pz, Pose{}, state);
  CHECK(p.p_ins == doctest::Approx(1.0 / (std::sqrt(2.0 * std::numbers::pi) * state.config.sigma_ins)));
  CHECK(p.total() == doctest::Approx(p.p_ins));

  for (const std::vector<AirwayId>& prev : {std::vector<AirwayId>{0}, {3, 4}, {7, 8, 17}}) {
    const auto table = airway_prior_table(tree, prev);
    double sum = 0.0;
    for (double v : table) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    for (AirwayId id = 0; id < tree.size(); ++id) {
      int best = 1 << 20;
      for (AirwayId j : prev) best = std::min(best, generation_distance(tree, id, j));
      if (best > 3) CHECK(table[id] == 0.0);
    }
  }
}

TEST_CASE("filter gating without a bifurcation") {
  const AirwayTree tree = testing::y_tree();
  FilterState state;
  state.prev_visible_ids = {0};
  UnlabeledObservation obs;
  ObservationRow row;
  row.p_is_vis = 1.0;
  row.y_p = {0, 0, 20};
  obs.rows.push_back(row);
  const FilterResult r = filter_step(obs, 30.0, tree, state);
  CHECK_FALSE(r.estimate);
  CHECK_FALSE(state.prev_pose);
  CHECK(state.prev_visible_ids == std::vector<AirwayId>{0});
}

TEST_CASE("zero-noise filter labels every bifurcation") {
  const AirwayTree tree = generate_tree(TreeGenConfig{.depth = 4, .seed = 6});
  TrackingConfig cfg;
  cfg.localizer = LocalizerKind::kParticleFilter;
  int labeled = 0;
  for (AirwayId leaf = 7; leaf < tree.size(); leaf += 3) {
    const EpisodeLog log = run_tracking_episode(tree, scripted_path(tree, leaf), cfg);
    for (const FrameRecord& f : log.frames) {
      if (!f.truth_bifurcation || !f.assigned) continue;
      ++labeled;
      REQUIRE(f.assigned->parent == *f.truth_bifurcation);
      REQUIRE(f.estimate);
      for (AirwayId c : f.assigned->children) {
        if (c >= 0) REQUIRE(tree.airway(c).parent == f.assigned->parent);
      }
    }
  }
  CHECK(labeled > 500);
}

TEST_CASE("posterior argmax is invariant to prior scale") {
  const AirwayTree& tree = depth5_tree();
  const VisibilityConfig vis;
  NoiseConfig noise;
  noise.sigma_dir = 0.02;
  std::mt19937_64 rng(19);
  Rng oracle_rng(3);
  FilterState state;
  int checked = 0;
  for (int n = 0; n < 200; ++n) {
    const Pose pose = random_bifurcation_pose(tree, rng);
    const UnlabeledObservation obs = oracle_bifurcationnet(pose, tree, vis, noise, oracle_rng);
    const auto bif = extract_bifurcation(obs, state.config);
    if (!bif) continue;
    const auto scores = score_candidates(obs, *bif, 80.0, tree, state);
    auto argmax = [&](double scale) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scale * scores[i].posterior() > scale * scores[best].posterior()) best = i;
      }
      return best;
    };
    CHECK(argmax(1.0) == argmax(1e-6));
    CHECK(argmax(1.0) == argmax(37.5));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("filter config parsing") {
  const FilterConfig cfg = filter_config_from_json(R"({"n_candidates": 5, "sigma_fit": 0.2})");
  CHECK(cfg.n_candidates == 5);
  CHECK(cfg.sigma_fit == 0.2);
  CHECK_THROWS_AS(filter_config_from_json(R"({"n_candidates": 0})"), Error);
  CHECK_THROWS_AS(filter_config_from_json(R"({"bogus": 1})"), Error);
}

TEST_CASE("prior roll term uses the angular difference") {
  const AirwayTree& tree = depth5_tree();
  FilterState state;
  Pose prev = look_along({0, 0, 20}, {0, 0, 1});
  state.prev_pose = prev;
  Pose cand = prev;
  cand.rotation = prev.rotation * rot_z(20 * kDeg);
  const AirwayId id = tree.bifurcations()[0];
  const PriorTerms p = prior_probability(id, tree, tree.z_bif(id) - 10.0, 10.0, cand, state);
  CHECK(p.p_r == doctest::Approx(gaussian_density(20 * kDeg, state.config.sigma_r)));
  CHECK(p.p_x == doctest::Approx(gaussian_density(0.0, state.config.sigma_x)));
}
