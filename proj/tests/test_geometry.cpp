#include "support.hpp"

#include "bronchonav/geometry.hpp"

#include <Eigen/Geometry>
#include <doctest.h>

#include <random>

using namespace bronchonav;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
}

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  Pose p;
  p.position = {u(rng), u(rng), u(rng)};
  std::normal_distribution<double> n(0.0, 1.0);
  p.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
  return p;
}

}  // namespace

TEST_CASE("cone and range visibility") {
  const Pose cam;
  const VisibilityConfig vis;
  CHECK(point_visible(cam, vis, {0, 0, 10}));
  CHECK_FALSE(point_visible(cam, vis, {0, 0, 31}));
  CHECK_FALSE(point_visible(cam, vis, 10.0 * Eigen::Vector3d(std::sin(31 * kDeg), 0, std::cos(31 * kDeg))));
  CHECK(point_visible(cam, vis, 10.0 * Eigen::Vector3d(std::sin(29 * kDeg), 0, std::cos(29 * kDeg))));
  CHECK_FALSE(point_visible(cam, vis, {0, 0, -10}));

  // Same checks after moving and turning the camera.
  const Pose moved = look_along({5, -3, 12}, {1, 0, 0});
  CHECK(point_visible(moved, vis, {15, -3, 12}));
  CHECK_FALSE(point_visible(moved, vis, {5, -3, 22}));
}

TEST_CASE("alpha-beta parameterization") {
  CHECK(direction_to_alpha_beta({0, 0, 1}).norm() == doctest::Approx(0.0));
  const Eigen::Vector2d ab = direction_to_alpha_beta({std::sin(0.2), 0, std::cos(0.2)});
  CHECK(ab.x() == doctest::Approx(0.0));
  CHECK(ab.y() == doctest::Approx(0.2));

  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector3d d = random_unit(rng);
    if (d.z() < 0) d.z() = -d.z();
    worst = std::max(worst, (alpha_beta_to_direction(direction_to_alpha_beta(d)) - d).norm());
    // Independent construction of the same direction.
    const Eigen::Vector2d a = direction_to_alpha_beta(d);
    const Eigen::Vector3d built = rot_x(a.x()) * rot_y(a.y()) * Eigen::Vector3d::UnitZ();
    REQUIRE((built - d).norm() < 1e-9);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("ground truth in a straight trachea") {
  const VisibilityConfig vis;
  const Pose cam;

  const auto short_view = ground_truth_observation(cam, vis, testing::straight_tree(25.0));
  REQUIRE(short_view.size() == 1);
  CHECK(short_view[0].is_vis);
  CHECK_FALSE(short_view[0].has_vis_child);
  CHECK((short_view[0].y_p - Eigen::Vector3d(0, 0, 25)).norm() < 1e-9);
  CHECK(short_view[0].y_d.norm() < 1e-12);

  const auto long_view = ground_truth_observation(cam, vis, testing::straight_tree(40.0));
  CHECK(long_view[0].is_vis);
  CHECK(long_view[0].y_p.z() == doctest::Approx(30.0).epsilon(0.02));
  CHECK(long_view[0].y_p.z() <= 30.0);

  const Pose away = look_along({0, 0, -1}, {0, 0, -1});
  const auto none = ground_truth_observation(away, vis, testing::y_tree());
  for (const auto& g : none) CHECK_FALSE(g.is_vis);
}

TEST_CASE("ground truth invariants on random poses") {
  const TreeGenConfig cfg{.depth = 5, .seed = 8};
  const AirwayTree tree = generate_tree(cfg);
  const VisibilityConfig vis;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick(0, tree.size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int visible_total = 0;
  for (int n = 0; n < 300; ++n) {
    const Airway& a = tree.airway(pick(rng));
    const Eigen::Vector3d at = a.proximal() + u(rng) * (a.distal() - a.proximal());
    Eigen::Vector3d dir = (a.distal() - a.proximal()).normalized() + 0.3 * random_unit(rng);
    const Pose pose = look_along(at, dir.normalized(), random_unit(rng));
    for (const auto& g : ground_truth_observation(pose, vis, tree)) {
      if (g.has_vis_child) {
        REQUIRE(g.is_vis);
        CHECK(point_visible(pose, vis, tree.airway(g.airway_id).distal()));
      }
      if (g.is_vis) {
        ++visible_total;
        CHECK(camera_point_visible(vis, g.y_p));
      }
    }
  }
  CHECK(visible_total > 100);
}

TEST_CASE("pose errors") {
  const Pose a = look_along({1, 2, 3}, {0, 0, 1});

  const PoseErrors same = pose_errors(a, a);
  CHECK(same.position == doctest::Approx(0.0));
  CHECK(same.direction == doctest::Approx(0.0));
  CHECK(same.roll == doctest::Approx(0.0));

  Pose rolled = a;
  rolled.rotation = a.rotation * rot_z(30 * kDeg);
  const PoseErrors r = pose_errors(a, rolled);
  CHECK(r.direction == doctest::Approx(0.0));
  CHECK(r.roll == doctest::Approx(30.0));

  Pose yawed = a;
  yawed.rotation = a.rotation * rot_x(90 * kDeg);
  const PoseErrors y = pose_errors(a, yawed);
  CHECK(y.direction == doctest::Approx(90.0));
  CHECK(y.roll == doctest::Approx(0.0).epsilon(1e-9));

  Pose shifted = a;
  shifted.position += Eigen::Vector3d(3, 4, 0);
  CHECK(pose_errors(a, shifted).position == doctest::Approx(5.0));
}

TEST_CASE("pose errors are symmetric") {
  std::mt19937_64 rng(5);
  int tested = 0;
  while (tested < 1000) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    if (angle_between(a.pz(), b.pz()) > 179 * kDeg) continue;
    const PoseErrors ab = pose_errors(a, b), ba = pose_errors(b, a);
    REQUIRE(ab.position == doctest::Approx(ba.position));
    REQUIRE(ab.direction == doctest::Approx(ba.direction));
    REQUIRE(std::abs(ab.roll - ba.roll) < 1e-9);
    ++tested;
  }
}

TEST_CASE("minimal rotation") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d from = random_unit(rng), to = random_unit(rng);
    const Eigen::Matrix3d r = minimal_rotation(from, to);
    REQUIRE((r * from - to).norm() < 1e-9);
    // The rotation axis is fixed.
    const Eigen::Vector3d axis = from.cross(to);
    if (axis.norm() > 1e-6) REQUIRE((r * axis - axis).norm() < 1e-9);
  }
  CHECK_THROWS_AS(minimal_rotation({0, 0, 1}, {0, 0, -1}), Error);
}

TEST_CASE("pose validation") {
  Pose p;
  CHECK(p.is_valid());
  p.rotation(0, 0) = -1.0;
  CHECK_FALSE(p.is_valid());
  CHECK_THROWS_AS(p.validate(), Error);
}
