#include "bronchonav/geometry.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace bronchonav {

namespace {

constexpr double kOrthonormalTol = 1e-9;
constexpr double kUnitTol = 1e-9;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

bool Pose::is_valid() const {
  if (!position.allFinite() || !rotation.allFinite()) return false;
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kOrthonormalTol) return false;
  return std::abs(rotation.determinant() - 1.0) <= kOrthonormalTol;
}

void Pose::validate() const {
  if (!is_valid()) throw Error("pose rotation is not a proper orthonormal matrix");
}

Pose look_along(const Eigen::Vector3d& position, const Eigen::Vector3d& forward,
                const Eigen::Vector3d& up_hint) {
  const Eigen::Vector3d z = forward.normalized();
  Eigen::Vector3d down = -up_hint + up_hint.dot(z) * z;
  if (down.norm() < 1e-9) {
    const Eigen::Vector3d alt = std::abs(z.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    down = alt - alt.dot(z) * z;
  }
  const Eigen::Vector3d y = down.normalized();
  const Eigen::Vector3d x = y.cross(z);
  Pose pose;
  pose.position = position;
  pose.rotation.col(0) = x;
  pose.rotation.col(1) = y;
  pose.rotation.col(2) = z;
  return pose;
}

Eigen::Matrix3d rot_x(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitX()).toRotationMatrix();
}

Eigen::Matrix3d rot_y(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
}

Eigen::Matrix3d rot_z(double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

Eigen::Matrix3d minimal_rotation(const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
  const Eigen::Vector3d f = from.normalized();
  const Eigen::Vector3d t = to.normalized();
  const Eigen::Vector3d axis = f.cross(t);
  const double s = axis.norm();
  const double c = f.dot(t);
  if (s < 1e-15) {
    if (c > 0.0) return Eigen::Matrix3d::Identity();
    throw Error("minimal rotation undefined for antiparallel vectors");
  }
  return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

void VisibilityConfig::validate() const {
  if (!(fov_full_angle > 0.0) || !(fov_full_angle < std::numbers::pi)) {
    throw Error("visibility: fov_full_angle must lie in (0, pi)");
  }
  if (!(max_dist > 0.0)) throw Error("visibility: max_dist must be positive");
}

bool camera_point_visible(const VisibilityConfig& cfg, const Eigen::Vector3d& q) {
  if (!(q.z() > 0.0)) return false;
  if (q.norm() > cfg.max_dist) return false;
  const double off_axis = std::atan2(std::hypot(q.x(), q.y()), q.z());
  return off_axis <= 0.5 * cfg.fov_full_angle;
}

bool point_visible(const Pose& pose, const VisibilityConfig& cfg, const Eigen::Vector3d& q_ct) {
  return camera_point_visible(cfg, pose.to_camera(q_ct));
}

Eigen::Vector2d direction_to_alpha_beta(const Eigen::Vector3d& d) {
  if (std::abs(d.norm() - 1.0) > kUnitTol) throw Error("direction_to_alpha_beta: input is not a unit vector");
  if (std::abs(d.x()) >= 1.0 - 1e-12) throw Error("direction_to_alpha_beta: gimbal-degenerate direction");
  return {std::atan2(-d.y(), d.z()), std::asin(d.x())};
}

Eigen::Vector3d alpha_beta_to_direction(const Eigen::Vector2d& ab) {
  const double ca = std::cos(ab.x());
  const double sa = std::sin(ab.x());
  const double cb = std::cos(ab.y());
  const double sb = std::sin(ab.y());
  return {sb, -cb * sa, cb * ca};
}

namespace {

// Line of sight from the camera to q stays inside the lumen (1 mm steps).
bool line_of_sight_clear(const AirwayTree& tree, const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
  const double dist = (to - from).norm();
  const int steps = static_cast<int>(std::ceil(dist));
  for (int k = 1; k < steps; ++k) {
    if (!tree.inside_lumen(from + (to - from) * (static_cast<double>(k) / steps))) return false;
  }
  return true;
}

}  // namespace

std::vector<AirwayGroundTruth> ground_truth_observation(const Pose& pose, const VisibilityConfig& cfg,
                                                        const AirwayTree& tree) {
  std::vector<AirwayGroundTruth> out(tree.size());
  const Eigen::Matrix3d rt = pose.rotation.transpose();
  for (AirwayId id = 0; id < tree.size(); ++id) {
    AirwayGroundTruth& gt = out[id];
    gt.airway_id = id;
    if ((tree.bound_center(id) - pose.position).norm() - tree.bound_radius(id) > cfg.max_dist) continue;

    const auto& samples = tree.samples(id);
    double best = -1.0;
    const CenterlineSample* furthest = nullptr;
    Eigen::Vector3d furthest_cam;
    bool distal_visible = false;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const Eigen::Vector3d q = rt * (samples[k].point - pose.position);
      if (!camera_point_visible(cfg, q)) continue;
      if (cfg.wall_occlusion && !line_of_sight_clear(tree, pose.position, samples[k].point)) continue;
      const double d = q.norm();
      // ties go to the larger arc length; samples are in increasing arc order
      if (d >= best) {
        best = d;
        furthest = &samples[k];
        furthest_cam = q;
      }
      if (k + 1 == samples.size()) distal_visible = true;
    }
    if (!furthest) continue;
    gt.is_vis = true;
    gt.has_vis_child = distal_visible && !tree.airway(id).is_leaf();
    gt.y_p = furthest_cam;
    const Eigen::Vector3d t = (rt * furthest->tangent).normalized();
    gt.y_d = {std::atan2(-t.y(), t.z()), std::asin(std::clamp(t.x(), -1.0, 1.0))};
    gt.furthest_arc = furthest->arc_length;
  }
  return out;
}

std::optional<AirwayId> visible_bifurcation(const std::vector<AirwayGroundTruth>& truth,
                                            const AirwayTree& tree) {
  std::optional<AirwayId> best;
  double best_dist = 0.0;
  for (const auto& gt : truth) {
    if (!gt.is_vis || !gt.has_vis_child) continue;
    int visible_children = 0;
    for (AirwayId c : tree.airway(gt.airway_id).children) visible_children += truth[c].is_vis ? 1 : 0;
    if (visible_children < 2) continue;
    const double d = gt.y_p.norm();
    if (!best || d < best_dist) {
      best = gt.airway_id;
      best_dist = d;
    }
  }
  return best;
}

PoseErrors pose_errors(const Pose& a, const Pose& b) {
  PoseErrors e;
  e.position = (a.position - b.position).norm();
  e.direction = angle_between(a.pz(), b.pz()) * kRadToDeg;
  const Eigen::Matrix3d align = minimal_rotation(b.pz(), a.pz());
  e.roll = angle_between(a.px(), align * b.px()) * kRadToDeg;
  return e;
}

}  // namespace bronchonav
