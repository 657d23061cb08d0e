#pragma once

#include "bronchonav/skeleton.hpp"

#include <Eigen/Core>

#include <numbers>
#include <vector>

namespace bronchonav {

/// Camera pose in the CT frame. Rotation columns are the camera axes
/// (p_x, p_y, p_z); p_z is the optical axis. Maps camera-frame vectors to CT.
struct Pose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();

  Eigen::Vector3d px() const { return rotation.col(0); }
  Eigen::Vector3d py() const { return rotation.col(1); }
  Eigen::Vector3d pz() const { return rotation.col(2); }

  Eigen::Vector3d to_camera(const Eigen::Vector3d& q_ct) const {
    return rotation.transpose() * (q_ct - position);
  }
  Eigen::Vector3d to_ct(const Eigen::Vector3d& q_cam) const { return rotation * q_cam + position; }

  /// Throws Error unless the rotation is orthonormal (1e-9) with det +1.
  void validate() const;
  bool is_valid() const;
};

/// Camera frame whose optical axis is `forward`; `up_hint` fixes the roll
/// (p_y is the component of -up_hint orthogonal to forward).
Pose look_along(const Eigen::Vector3d& position, const Eigen::Vector3d& forward,
                const Eigen::Vector3d& up_hint = Eigen::Vector3d::UnitY());

Eigen::Matrix3d rot_x(double angle);
Eigen::Matrix3d rot_y(double angle);
Eigen::Matrix3d rot_z(double angle);
/// Rotation by `angle` about unit `axis`.
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle);

/// Numerically stable angle between two vectors, radians.
double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Geodesic rotation taking unit `from` onto unit `to`. Throws Error when the
/// vectors are antiparallel.
Eigen::Matrix3d minimal_rotation(const Eigen::Vector3d& from, const Eigen::Vector3d& to);

struct VisibilityConfig {
  double fov_full_angle = std::numbers::pi / 3;  // 60 deg cone, apex angle
  double max_dist = 30.0;                        // mm
  bool wall_occlusion = false;

  void validate() const;
};

bool point_visible(const Pose& pose, const VisibilityConfig& cfg, const Eigen::Vector3d& q_ct);
/// Same test on a point already expressed in the camera frame.
bool camera_point_visible(const VisibilityConfig& cfg, const Eigen::Vector3d& q_cam);

/// (alpha, beta) parameterization of a camera-frame direction:
/// beta = asin(d_x), alpha = atan2(-d_y, d_z), so R_x(alpha) R_y(beta) z = d.
Eigen::Vector2d direction_to_alpha_beta(const Eigen::Vector3d& d);
Eigen::Vector3d alpha_beta_to_direction(const Eigen::Vector2d& ab);

/// Per-airway ground truth, index = airway id.
struct AirwayGroundTruth {
  AirwayId airway_id = 0;
  bool is_vis = false;
  bool has_vis_child = false;
  Eigen::Vector3d y_p = Eigen::Vector3d::Zero();  // camera frame, mm
  Eigen::Vector2d y_d = Eigen::Vector2d::Zero();  // (alpha, beta), rad
  double furthest_arc = 0.0;                      // arc length of y_p along the airway
};

std::vector<AirwayGroundTruth> ground_truth_observation(const Pose& pose, const VisibilityConfig& cfg,
                                                        const AirwayTree& tree);

/// Airway whose bifurcation is visible together with at least two children,
/// nearest to the camera by |y_p|. This is the bifurcation a correct localizer
/// is expected to label.
std::optional<AirwayId> visible_bifurcation(const std::vector<AirwayGroundTruth>& truth,
                                            const AirwayTree& tree);

struct PoseErrors {
  double position = 0.0;   // e_p, mm
  double direction = 0.0;  // e_d, deg
  double roll = 0.0;       // e_r, deg
};

/// Position, pointing-direction and roll error between two poses. Roll is
/// measured between the p_x axes after rotating b's p_z onto a's p_z along the
/// geodesic. Throws Error when the pointing vectors are antiparallel.
PoseErrors pose_errors(const Pose& a, const Pose& b);

}  // namespace bronchonav
