#pragma once

#include "bronchonav/geometry.hpp"
#include "bronchonav/perception.hpp"
#include "bronchonav/skeleton.hpp"

#include <Eigen/Core>

#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bronchonav {

struct Trajectory {
  std::vector<AirwayId> airway_ids;  // root first
  AirwayId target_id = 0;
};

/// Root-to-target path. Throws Error for an unknown target.
Trajectory plan_trajectory(const AirwayTree& tree, AirwayId target_id);

struct ControllerConfig {
  double k = 0.5;
  double v_ins = 10.0;                    // mm/s
  double e_max = std::numbers::pi / 2.0;  // rad
  double lookahead = 15.0;                // mm
  double handoff_dist = 15.0;             // mm
  double threshold = 0.5;                 // visibility cutoff on p_isVis

  void validate() const;
};

ControllerConfig controller_config_from_json(const std::string& text);

enum class Mode { kFollow, kRecover };
const char* mode_name(Mode m);

struct Command {
  Eigen::Vector4d du_tendons = Eigen::Vector4d::Zero();
  double du_ins = 0.0;  // mm/s, negative retracts
  Mode mode = Mode::kFollow;
  AirwayId aim = -1;  // airway steered toward, -1 when none
};

/// Tendon Jacobian J = [[1,0,-1,0],[0,1,0,-1]].
Eigen::Matrix<double, 2, 4> tendon_jacobian();

/// du = k J^+ R_theta^T (d_alpha, d_beta), with J^+ = J^T / 2.
Eigen::Vector4d tendon_command(const Eigen::Vector2d& err, double roll, const ControllerConfig& cfg);

/// Articulation achieved by a tendon increment: (1/k) R_theta J du.
Eigen::Vector2d achieved_articulation(const Eigen::Vector4d& du, double roll, const ControllerConfig& cfg);

/// max(0, v_ins (1 - |err| / e_max)).
double insertion_command(const Eigen::Vector2d& err, const ControllerConfig& cfg);

/// Angular error toward the point of the observed airway segment whose camera
/// distance is closest to the lookahead. The segment runs back from y_p along
/// -y_d for `segment_length` mm; only visible points are candidates, and y_p
/// is used when none is.
Eigen::Vector2d view_error(const ObservationRow& row, double segment_length, const VisibilityConfig& vis,
                           const ControllerConfig& cfg);

/// Airways considered visible this frame, keyed by ID (ascending).
using LabeledView = std::vector<std::pair<AirwayId, ObservationRow>>;

/// Rows of a labeled matrix with p_isVis at or above threshold.
LabeledView labeled_view(const ObservationMatrix& obs, int airway_count, double threshold);

struct SupervisorState {
  Trajectory trajectory;
  int active = 0;  // index into trajectory.airway_ids
  Mode mode = Mode::kFollow;
  bool success = false;
  int recoveries = 0;  // FOLLOW -> RECOVER transitions
};

SupervisorState start_supervisor(const Trajectory& trajectory);

/// Resets the active index to the root of a new trajectory.
void replan(SupervisorState& state, const Trajectory& trajectory);

/// One control decision. Throws Error for an empty trajectory.
Command supervisor_step(SupervisorState& state, const LabeledView& view, const std::optional<Pose>& estimate,
                        double roll, const AirwayTree& tree, const VisibilityConfig& vis,
                        const ControllerConfig& cfg);

}  // namespace bronchonav
