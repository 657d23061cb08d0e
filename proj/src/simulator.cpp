#include "bronchonav/simulator.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

namespace bronchonav {

using Json = nlohmann::ordered_json;

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw Error("sim: dt must be positive");
  if (!(heading_rate_limit > 0.0)) throw Error("sim: heading_rate_limit must be positive");
  if (max_steps < 1) throw Error("sim: max_steps must be at least 1");
  if (!(k > 0.0)) throw Error("sim: k must be positive");
}

SimConfig sim_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("sim config: ") + e.what());
  }
  if (!doc.is_object()) throw Error("sim config: expected an object");
  SimConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "wall_mode") {
      const std::string m = value.is_string() ? value.get<std::string>() : "";
      if (m == "CLAMP") cfg.wall_mode = WallMode::kClamp;
      else if (m == "SLIDE") cfg.wall_mode = WallMode::kSlide;
      else throw Error("sim config.wall_mode: expected \"CLAMP\" or \"SLIDE\"");
      continue;
    }
    if (key == "max_steps" || key == "seed") {
      if (!value.is_number_integer()) throw Error("sim config." + key + ": expected an integer");
      if (key == "max_steps") cfg.max_steps = value.get<int>();
      else cfg.seed = value.get<std::uint64_t>();
      continue;
    }
    if (!value.is_number()) throw Error("sim config." + key + ": expected a number");
    if (key == "dt") cfg.dt = value.get<double>();
    else if (key == "heading_rate_limit") cfg.heading_rate_limit = value.get<double>();
    else if (key == "k") cfg.k = value.get<double>();
    else throw Error("sim config: unknown field \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

StepResult step(const ScopeState& state, const Command& cmd, const AirwayTree& tree, const SimConfig& cfg) {
  StepResult r{state, false};
  ScopeState& s = r.state;

  ControllerConfig plant;
  plant.k = cfg.k;
  Eigen::Vector2d turn = achieved_articulation(cmd.du_tendons, state.roll, plant);
  const double max_turn = cfg.heading_rate_limit * cfg.dt;
  if (turn.norm() > max_turn) turn *= max_turn / turn.norm();
  if (turn.x() != 0.0 || turn.y() != 0.0) {
    const Eigen::Matrix3d rot = s.pose.rotation * rot_x(turn.x()) * rot_y(turn.y());
    s.pose.rotation = Eigen::Quaterniond(rot).normalized().toRotationMatrix();
  }
  s.tendons += cmd.du_tendons;

  if (cmd.du_ins == 0.0) return r;
  const Eigen::Vector3d old = s.pose.position;
  Eigen::Vector3d pos = old + s.pose.pz() * (cmd.du_ins * cfg.dt);
  s.u_ins = std::max(0.0, s.u_ins + cmd.du_ins * cfg.dt);

  if (!tree.inside_lumen(pos)) {
    r.collided = true;
    if (cfg.wall_mode == WallMode::kSlide) {
      const LumenFoot foot = tree.nearest_lumen(pos);
      const Eigen::Vector3d out = pos - foot.point;
      if (out.norm() > 0.0) {
        const Eigen::Vector3d n = out.normalized();
        Eigen::Vector3d disp = pos - old;
        disp -= std::max(0.0, disp.dot(n)) * n;
        pos = old + disp;
      }
    }
    if (!tree.inside_lumen(pos)) {
      const LumenFoot foot = tree.nearest_lumen(pos);
      const Eigen::Vector3d out = pos - foot.point;
      pos = out.norm() > 0.0 ? foot.point + out.normalized() * (foot.radius * (1.0 - 1e-9)) : foot.point;
    }
  }
  s.pose.position = pos;
  return r;
}

namespace {

struct PathPolyline {
  std::vector<Eigen::Vector3d> points;
  std::vector<double> arc;

  double length() const { return arc.back(); }

  Eigen::Vector3d at(double s) const {
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(arc.begin(), arc.end(), s);
    std::size_t i = it == arc.end() ? arc.size() - 1 : static_cast<std::size_t>(it - arc.begin());
    if (i == 0) return points.front();
    const double span = arc[i] - arc[i - 1];
    const double u = span > 0.0 ? (s - arc[i - 1]) / span : 0.0;
    return points[i - 1] + u * (points[i] - points[i - 1]);
  }
};

PathPolyline root_to_leaf(const AirwayTree& tree, AirwayId leaf) {
  PathPolyline p;
  for (AirwayId id : tree.path_from_root(leaf)) {
    const auto& cl = tree.airway(id).centerline;
    for (std::size_t k = p.points.empty() ? 0 : 1; k < cl.size(); ++k) {
      p.arc.push_back(p.points.empty() ? 0.0 : p.arc.back() + (cl[k] - p.points.back()).norm());
      p.points.push_back(cl[k]);
    }
  }
  return p;
}

Json noise_json(const NoiseConfig& n) {
  return Json{{"sigma_pos", n.sigma_pos}, {"sigma_dir", n.sigma_dir}, {"p_miss", n.p_miss},
              {"p_false", n.p_false},     {"p_swap", n.p_swap},       {"seed", n.seed}};
}

Json vis_json(const VisibilityConfig& v) {
  return Json{{"fov_full_angle", v.fov_full_angle}, {"max_dist", v.max_dist}, {"wall_occlusion", v.wall_occlusion}};
}

Json filter_json(const FilterConfig& f) {
  return Json{{"n_candidates", f.n_candidates}, {"sigma_fit", f.sigma_fit}, {"sigma_ins", f.sigma_ins},
              {"sigma_x", f.sigma_x},           {"sigma_r", f.sigma_r},     {"threshold", f.threshold},
              {"child_match_tol", f.child_match_tol}};
}

void record_truth(FrameRecord& f, const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree) {
  for (const auto& gt : truth) {
    if (gt.is_vis) f.truth_visible.push_back(gt.airway_id);
    if (gt.has_vis_child) f.truth_has_vis_child.push_back(gt.airway_id);
  }
  f.truth_bifurcation = visible_bifurcation(truth, tree);
}

void apply_airwaynet(FrameRecord& f, const ObservationMatrix& obs, const AirwayTree& tree, double threshold) {
  f.labeled = true;
  f.rows = sparse_rows(obs, tree.size());
  f.estimate.reset();
  f.assigned.reset();
  if (auto est = localize_airwaynet(obs, tree, threshold)) {
    f.estimate = est->pose;
    Assignment a;
    a.parent = est->match.parent_id;
    a.children = est->match.child_ids;
    f.assigned = std::move(a);
  }
}

void apply_filter(FrameRecord& f, const UnlabeledObservation& obs, double u_ins, const AirwayTree& tree,
                  FilterState& state) {
  f.labeled = false;
  f.unlabeled_rows = obs.rows;
  f.estimate.reset();
  f.assigned.reset();
  FilterResult res = filter_step(obs, u_ins, tree, state);
  if (res.estimate) {
    f.estimate = res.estimate;
    Assignment a;
    a.parent = *res.parent;
    a.children = res.children;
    a.parent_row = res.parent_row;
    a.child_rows = res.child_rows;
    f.assigned = std::move(a);
  }
}

ObservationMatrix matrix_from_rows(const FrameRecord& f, const AirwayTree& tree) {
  ObservationMatrix obs(tree.max_rows());
  for (const auto& [id, row] : f.rows) {
    if (id < 0 || id >= obs.size()) throw Error("replay: row ID " + std::to_string(id) + " outside the tree");
    obs.rows[id] = row;
  }
  return obs;
}

}  // namespace

std::vector<ScriptedFrame> scripted_path(const AirwayTree& tree, AirwayId leaf, const ScriptConfig& cfg) {
  if (cfg.frames < 2) throw Error("scripted_path: need at least two frames");
  const PathPolyline path = root_to_leaf(tree, leaf);
  const double s0 = std::min(cfg.start_arc, 0.5 * path.length());
  const double s1 = std::max(s0, path.length() - 1.0);

  std::vector<ScriptedFrame> out;
  out.reserve(cfg.frames);
  Eigen::Matrix3d base;
  for (int k = 0; k < cfg.frames; ++k) {
    const double frac = static_cast<double>(k) / (cfg.frames - 1);
    const double s = s0 + frac * (s1 - s0);
    const Eigen::Vector3d p = path.at(s);
    Eigen::Vector3d ahead = path.at(s + cfg.chord_ahead) - p;
    if (ahead.norm() < 1e-6) ahead = path.points.back() - path.points[path.points.size() - 2];
    const Eigen::Vector3d z = ahead.normalized();
    if (k == 0) {
      base = look_along(p, z).rotation;
    } else {
      base = minimal_rotation(base.col(2), z) * base;
      base = Eigen::Quaterniond(base).normalized().toRotationMatrix();
    }
    ScriptedFrame f;
    f.roll = cfg.roll_amplitude * std::sin(2.0 * std::numbers::pi * frac);
    f.pose.position = p;
    f.pose.rotation = base * rot_z(f.roll);
    f.u_ins = s;
    out.push_back(f);
  }
  return out;
}

std::string tracking_config_json(const TrackingConfig& cfg) {
  Json j{{"noise", noise_json(cfg.noise)},
         {"visibility", vis_json(cfg.vis)},
         {"filter", filter_json(cfg.filter)},
         {"localizer", cfg.localizer == LocalizerKind::kAirwayNet ? "airwaynet" : "particle_filter"},
         {"dt", cfg.dt}};
  return j.dump();
}

std::string driving_config_json(const DrivingConfig& cfg, const SimConfig& sim) {
  const ControllerConfig& c = cfg.controller;
  Json j{{"noise", noise_json(cfg.noise)},
         {"visibility", vis_json(cfg.vis)},
         {"controller",
          Json{{"k", c.k}, {"v_ins", c.v_ins}, {"e_max", c.e_max}, {"lookahead", c.lookahead},
               {"handoff_dist", c.handoff_dist}, {"threshold", c.threshold}}},
         {"targets", cfg.targets},
         {"start_depth", cfg.start_depth},
         {"sim",
          Json{{"dt", sim.dt}, {"max_steps", sim.max_steps}, {"heading_rate_limit", sim.heading_rate_limit},
               {"wall_mode", sim.wall_mode == WallMode::kClamp ? "CLAMP" : "SLIDE"}, {"k", sim.k},
               {"seed", sim.seed}}}};
  return j.dump();
}

EpisodeLog run_tracking_episode(const AirwayTree& tree, const std::vector<ScriptedFrame>& script,
                                const TrackingConfig& cfg) {
  cfg.noise.validate();
  cfg.vis.validate();
  cfg.filter.validate();
  EpisodeLog log;
  log.kind = "tracking";
  log.tree_hash = tree_hash(tree);
  log.airway_count = tree.size();
  log.seed = cfg.noise.seed;
  log.config_json = tracking_config_json(cfg);

  Rng rng(cfg.noise.seed);
  FilterState state;
  state.config = cfg.filter;
  log.frames.reserve(script.size());
  for (std::size_t k = 0; k < script.size(); ++k) {
    const ScriptedFrame& sf = script[k];
    FrameRecord f;
    f.t = static_cast<double>(k) * cfg.dt;
    f.true_state.pose = sf.pose;
    f.true_state.u_ins = sf.u_ins;
    f.true_state.roll = sf.roll;
    const auto truth = ground_truth_observation(sf.pose, cfg.vis, tree);
    record_truth(f, truth, tree);
    if (cfg.localizer == LocalizerKind::kAirwayNet) {
      apply_airwaynet(f, oracle_airwaynet(truth, tree, cfg.noise, rng, &sf.pose), tree, cfg.filter.threshold);
    } else {
      apply_filter(f, oracle_bifurcationnet(truth, tree, cfg.noise, rng, &sf.pose), sf.u_ins, tree, state);
    }
    log.frames.push_back(std::move(f));
  }
  log.outcome.success = true;
  log.outcome.completion_time = log.frames.empty() ? 0.0 : log.frames.back().t;
  return log;
}

EpisodeLog run_driving_episode(const AirwayTree& tree, const DrivingConfig& cfg, const SimConfig& sim) {
  cfg.noise.validate();
  cfg.vis.validate();
  cfg.controller.validate();
  sim.validate();
  if (cfg.targets.empty()) throw Error("driving: no targets");
  for (AirwayId t : cfg.targets) {
    if (!tree.contains(t)) throw Error("driving: unknown target airway " + std::to_string(t));
  }

  EpisodeLog log;
  log.kind = "driving";
  log.tree_hash = tree_hash(tree);
  log.airway_count = tree.size();
  log.seed = sim.seed;
  log.config_json = driving_config_json(cfg, sim);

  std::seed_seq seq{cfg.noise.seed, sim.seed};
  Rng rng(seq);
  const AirwayId root = tree.root_id();
  const Eigen::Vector3d axis = tree.proximal_direction(root);
  ScopeState scope;
  scope.pose = look_along(tree.airway(root).proximal() + cfg.start_depth * axis, axis);
  scope.u_ins = cfg.start_depth;

  std::size_t target = 0;
  SupervisorState sup = start_supervisor(plan_trajectory(tree, cfg.targets[0]));
  for (int k = 0; k < sim.max_steps; ++k) {
    FrameRecord f;
    f.t = k * sim.dt;
    f.true_state = scope;
    const auto truth = ground_truth_observation(scope.pose, cfg.vis, tree);
    record_truth(f, truth, tree);
    const ObservationMatrix obs = oracle_airwaynet(truth, tree, cfg.noise, rng, &scope.pose);
    apply_airwaynet(f, obs, tree, cfg.controller.threshold);
    const LabeledView view = labeled_view(obs, tree.size(), cfg.controller.threshold);
    const Command cmd = supervisor_step(sup, view, f.estimate, scope.roll, tree, cfg.vis, cfg.controller);
    f.command = cmd;
    log.frames.push_back(std::move(f));

    if (sup.success) {
      if (++target == cfg.targets.size()) {
        log.outcome.success = true;
        log.outcome.completion_time = k * sim.dt;
        break;
      }
      replan(sup, plan_trajectory(tree, cfg.targets[target]));
    }
    const StepResult r = step(scope, cmd, tree, sim);
    scope = r.state;
    log.outcome.collisions += r.collided ? 1 : 0;
  }
  if (!log.outcome.success) log.outcome.completion_time = sim.max_steps * sim.dt;
  log.outcome.recoveries = sup.recoveries;
  return log;
}

EpisodeLog replay_localization(const EpisodeLog& log, const AirwayTree& tree, const FilterConfig& filter) {
  verify_tree_hash(log, tree);
  filter.validate();
  EpisodeLog out = log;
  FilterState state;
  state.config = filter;
  for (FrameRecord& f : out.frames) {
    if (f.labeled) {
      apply_airwaynet(f, matrix_from_rows(f, tree), tree, filter.threshold);
    } else {
      apply_filter(f, UnlabeledObservation{f.unlabeled_rows}, f.true_state.u_ins, tree, state);
    }
  }
  return out;
}

BenchmarkResult run_benchmark(const AirwayTree& tree, LocalizerKind localizer, double seconds, std::uint64_t seed) {
  std::vector<AirwayId> ends;
  for (const Airway& a : tree.airways()) {
    if (a.is_leaf()) ends.push_back(a.id);
  }
  const AirwayId target = ends[ends.size() / 2];
  const std::vector<ScriptedFrame> script = scripted_path(tree, target);

  NoiseConfig noise;
  noise.sigma_pos = 0.5;
  noise.sigma_dir = 0.02;
  noise.seed = seed;
  const VisibilityConfig vis;
  const ControllerConfig ctrl;
  FilterState fstate;
  Rng rng(noise.seed);
  SupervisorState sup = start_supervisor(plan_trajectory(tree, target));

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  BenchmarkResult r;
  while (r.seconds < seconds) {
    const ScriptedFrame& f = script[r.iterations % script.size()];
    const auto truth = ground_truth_observation(f.pose, vis, tree);
    std::optional<Pose> estimate;
    const ObservationMatrix obs = oracle_airwaynet(truth, tree, noise, rng, &f.pose);
    if (localizer == LocalizerKind::kParticleFilter) {
      estimate = filter_step(oracle_bifurcationnet(truth, tree, noise, rng, &f.pose), f.u_ins, tree, fstate).estimate;
    } else if (auto est = localize_airwaynet(obs, tree)) {
      estimate = est->pose;
    }
    if (sup.success) replan(sup, sup.trajectory);
    supervisor_step(sup, labeled_view(obs, tree.size(), ctrl.threshold), estimate, f.roll, tree, vis, ctrl);
    ++r.iterations;
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  return r;
}

}  // namespace bronchonav
