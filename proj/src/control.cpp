#include "bronchonav/control.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace bronchonav {

Trajectory plan_trajectory(const AirwayTree& tree, AirwayId target_id) {
  if (!tree.contains(target_id)) throw Error("plan_trajectory: unknown airway ID " + std::to_string(target_id));
  return Trajectory{tree.path_from_root(target_id), target_id};
}

void ControllerConfig::validate() const {
  if (!(k > 0.0) || !(v_ins > 0.0) || !(lookahead > 0.0) || !(handoff_dist > 0.0)) {
    throw Error("controller: k, v_ins, lookahead and handoff_dist must be positive");
  }
  if (!(e_max > 0.0 && e_max <= std::numbers::pi)) throw Error("controller: e_max must lie in (0, pi]");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("controller: threshold must lie in [0, 1]");
}

ControllerConfig controller_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("controller config: ") + e.what());
  }
  if (!doc.is_object()) throw Error("controller config: expected an object");
  ControllerConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_number()) throw Error("controller config." + key + ": expected a number");
    const double v = value.get<double>();
    if (key == "k") cfg.k = v;
    else if (key == "v_ins") cfg.v_ins = v;
    else if (key == "e_max") cfg.e_max = v;
    else if (key == "lookahead") cfg.lookahead = v;
    else if (key == "handoff_dist") cfg.handoff_dist = v;
    else if (key == "threshold") cfg.threshold = v;
    else throw Error("controller config: unknown field \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

const char* mode_name(Mode m) { return m == Mode::kFollow ? "FOLLOW" : "RECOVER"; }

Eigen::Matrix<double, 2, 4> tendon_jacobian() {
  Eigen::Matrix<double, 2, 4> j;
  j << 1, 0, -1, 0, 0, 1, 0, -1;
  return j;
}

namespace {

Eigen::Matrix2d rot2(double theta) {
  Eigen::Matrix2d r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

}  // namespace

Eigen::Vector4d tendon_command(const Eigen::Vector2d& err, double roll, const ControllerConfig& cfg) {
  const Eigen::Matrix<double, 4, 2> pinv = tendon_jacobian().transpose() / 2.0;
  return cfg.k * pinv * (rot2(roll).transpose() * err);
}

Eigen::Vector2d achieved_articulation(const Eigen::Vector4d& du, double roll, const ControllerConfig& cfg) {
  return rot2(roll) * (tendon_jacobian() * du) / cfg.k;
}

double insertion_command(const Eigen::Vector2d& err, const ControllerConfig& cfg) {
  return std::max(0.0, cfg.v_ins * (1.0 - err.norm() / cfg.e_max));
}

Eigen::Vector2d view_error(const ObservationRow& row, double segment_length, const VisibilityConfig& vis,
                           const ControllerConfig& cfg) {
  const Eigen::Vector3d d = alpha_beta_to_direction(row.y_d);
  constexpr double kStep = 0.5;
  const int steps = static_cast<int>(std::ceil(std::max(segment_length, 0.0) / kStep));
  Eigen::Vector3d aim = row.y_p;
  double best = -1.0;
  for (int k = 0; k <= steps; ++k) {
    const Eigen::Vector3d q = row.y_p - std::min(k * kStep, segment_length) * d;
    if (!camera_point_visible(vis, q)) continue;
    const double gap = std::abs(q.norm() - cfg.lookahead);
    if (best < 0.0 || gap < best) {
      best = gap;
      aim = q;
    }
  }
  if (aim.norm() < 1e-9) return Eigen::Vector2d::Zero();
  const Eigen::Vector3d u = aim.normalized();
  return {std::atan2(-u.y(), u.z()), std::asin(std::clamp(u.x(), -1.0, 1.0))};
}

LabeledView labeled_view(const ObservationMatrix& obs, int airway_count, double threshold) {
  LabeledView view;
  const int n = std::min(airway_count, obs.size());
  for (AirwayId id = 0; id < n; ++id) {
    if (obs.rows[id].p_is_vis >= threshold) view.emplace_back(id, obs.rows[id]);
  }
  return view;
}

SupervisorState start_supervisor(const Trajectory& trajectory) {
  SupervisorState s;
  s.trajectory = trajectory;
  return s;
}

void replan(SupervisorState& state, const Trajectory& trajectory) {
  state.trajectory = trajectory;
  state.active = 0;
  state.success = false;
}

namespace {

const ObservationRow* find_row(const LabeledView& view, AirwayId id) {
  auto it = std::lower_bound(view.begin(), view.end(), id,
                             [](const auto& entry, AirwayId key) { return entry.first < key; });
  return it != view.end() && it->first == id ? &it->second : nullptr;
}

// Observed extent of an airway: from y_p back to its proximal entry, which is
// the parent's bifurcation point when the parent reports a visible child.
double observed_length(const LabeledView& view, AirwayId id, const AirwayTree& tree, const ControllerConfig& cfg) {
  const ObservationRow* row = find_row(view, id);
  const double full = tree.length(id);
  const auto parent = tree.airway(id).parent;
  if (!row || !parent) return full;
  const ObservationRow* prow = find_row(view, *parent);
  if (!prow || prow->p_has_vis_child < cfg.threshold) return full;
  const Eigen::Vector3d d = alpha_beta_to_direction(row->y_d);
  return std::clamp((row->y_p - prow->y_p).dot(d), 0.0, full);
}

Command steer(AirwayId id, const LabeledView& view, const AirwayTree& tree, double roll,
              const VisibilityConfig& vis, const ControllerConfig& cfg, Mode mode) {
  const Eigen::Vector2d err = view_error(*find_row(view, id), observed_length(view, id, tree, cfg), vis, cfg);
  Command cmd;
  cmd.mode = mode;
  cmd.aim = id;
  cmd.du_tendons = tendon_command(err, roll, cfg);
  cmd.du_ins = mode == Mode::kFollow ? insertion_command(err, cfg) : -cfg.v_ins;
  return cmd;
}

// Aim from skeleton geometry for a camera that faces against the airway's
// direction: the centerline point distal of the camera's foot point whose
// distance is closest to the lookahead. Empty when the camera faces distally.
std::optional<Eigen::Vector2d> reversed_view_error(AirwayId id, const Pose& estimate, const AirwayTree& tree,
                                                   const ControllerConfig& cfg) {
  const Airway& a = tree.airway(id);
  if (estimate.pz().dot(a.distal() - a.proximal()) >= 0.0) return std::nullopt;
  const auto& samples = tree.samples(id);
  std::size_t foot = 0;
  double foot_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double d = (samples[k].point - estimate.position).norm();
    if (d < foot_d) {
      foot_d = d;
      foot = k;
    }
  }
  Eigen::Vector3d aim = a.distal();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = foot; k < samples.size(); ++k) {
    const double gap = std::abs((samples[k].point - estimate.position).norm() - cfg.lookahead);
    if (gap < best) {
      best = gap;
      aim = samples[k].point;
    }
  }
  const Eigen::Vector3d u = estimate.to_camera(aim);
  if (u.norm() < 1e-9) return std::nullopt;
  const Eigen::Vector3d n = u.normalized();
  return Eigen::Vector2d(std::atan2(-n.y(), n.z()), std::asin(std::clamp(n.x(), -1.0, 1.0)));
}

}  // namespace

Command supervisor_step(SupervisorState& state, const LabeledView& view, const std::optional<Pose>& estimate,
                        double roll, const AirwayTree& tree, const VisibilityConfig& vis,
                        const ControllerConfig& cfg) {
  const auto& ids = state.trajectory.airway_ids;
  if (ids.empty()) throw Error("supervisor: empty trajectory");
  if (state.success) return Command{};

  std::vector<int> seen;
  for (int k = 0; k < static_cast<int>(ids.size()); ++k) {
    if (find_row(view, ids[k])) seen.push_back(k);
  }

  if (seen.empty()) {
    if (state.mode == Mode::kFollow) ++state.recoveries;
    state.mode = Mode::kRecover;
    const ObservationRow* nearest = nullptr;
    AirwayId nearest_id = 0;
    for (const auto& [id, row] : view) {
      if (!nearest || row.y_p.norm() < nearest->y_p.norm()) {
        nearest = &row;
        nearest_id = id;
      }
    }
    if (!nearest) {
      Command cmd;
      cmd.mode = Mode::kRecover;
      cmd.du_ins = -cfg.v_ins;
      return cmd;
    }
    return steer(nearest_id, view, tree, roll, vis, cfg, Mode::kRecover);
  }

  if (state.mode == Mode::kRecover) {
    state.mode = Mode::kFollow;
    state.active = std::max(state.active, seen.back());
  }

  const int last = static_cast<int>(ids.size()) - 1;
  auto handoff = [&](int k) {
    const AirwayId id = ids[k];
    if (estimate) return (estimate->position - tree.airway(id).distal()).norm();
    const ObservationRow* row = find_row(view, id);
    return row ? row->y_p.norm() : std::numeric_limits<double>::infinity();
  };

  while (state.active < last && find_row(view, ids[state.active + 1])) {
    const bool near = handoff(state.active) <= cfg.handoff_dist;
    const bool active_lost = !find_row(view, ids[state.active]);
    if (!near && !active_lost) break;
    ++state.active;
  }

  if (state.active == last && find_row(view, ids[last]) && handoff(last) <= cfg.handoff_dist) {
    state.success = true;
    return Command{};
  }

  int follow = state.active;
  if (!find_row(view, ids[follow])) {
    follow = seen.front();
    for (int k : seen) {
      if (std::abs(k - state.active) <= std::abs(follow - state.active)) follow = k;
    }
  }
  if (estimate) {
    if (const auto err = reversed_view_error(ids[follow], *estimate, tree, cfg)) {
      Command cmd;
      cmd.aim = ids[follow];
      cmd.du_tendons = tendon_command(*err, roll, cfg);
      cmd.du_ins = insertion_command(*err, cfg);
      return cmd;
    }
  }
  return steer(ids[follow], view, tree, roll, vis, cfg, Mode::kFollow);
}

}  // namespace bronchonav
