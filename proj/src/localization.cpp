#include "bronchonav/localization.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace bronchonav {

namespace {

constexpr double kCollinearTol = 1e-6;

// Rotation taking unit `from` onto unit `to`, defined also for antiparallel input.
Eigen::Matrix3d align_directions(const Eigen::Vector3d& from, const Eigen::Vector3d& to) {
  if (from.dot(to) > -1.0 + 1e-12) return minimal_rotation(from, to);
  Eigen::Vector3d axis = from.cross(Eigen::Vector3d::UnitX());
  if (axis.norm() < 1e-6) axis = from.cross(Eigen::Vector3d::UnitY());
  return axis_angle(axis.normalized(), std::numbers::pi);
}

}  // namespace

std::optional<BifurcationMatch> find_consistent_bifurcation(const ObservationMatrix& obs, const AirwayTree& tree,
                                                            double threshold) {
  std::optional<BifurcationMatch> best;
  double best_p = 0.0;
  double best_dist = 0.0;
  for (AirwayId id : tree.bifurcations()) {
    if (id >= obs.size()) continue;
    const ObservationRow& row = obs.rows[id];
    if (row.p_has_vis_child < threshold || row.p_is_vis < threshold) continue;
    std::vector<AirwayId> kids;
    for (AirwayId c : tree.airway(id).children) {
      if (c < obs.size() && obs.rows[c].p_is_vis >= threshold) kids.push_back(c);
    }
    if (kids.size() < 2) continue;
    const double dist = row.y_p.norm();
    if (best && (row.p_has_vis_child < best_p || (row.p_has_vis_child == best_p && dist >= best_dist))) continue;
    BifurcationMatch m;
    m.parent_id = id;
    m.child_ids = kids;
    m.obs_parent = row;
    for (AirwayId c : kids) m.obs_children.push_back(obs.rows[c]);
    m.bif_point_cam = row.y_p;
    best = std::move(m);
    best_p = row.p_has_vis_child;
    best_dist = dist;
  }
  return best;
}

Pose align_pose(const BifurcationMatch& match, const AirwayTree& tree) {
  if (match.child_ids.size() != match.obs_children.size()) throw Error("align_pose: child rows do not match IDs");
  std::vector<Eigen::Vector3d> cam;
  std::vector<Eigen::Vector3d> ct;
  cam.push_back(alpha_beta_to_direction(match.obs_parent.y_d));
  ct.push_back(tree.distal_direction(match.parent_id));
  for (std::size_t k = 0; k < match.child_ids.size(); ++k) {
    cam.push_back(alpha_beta_to_direction(match.obs_children[k].y_d));
    ct.push_back(tree.proximal_direction(match.child_ids[k]));
  }

  bool spread = false;
  for (std::size_t i = 0; i < cam.size() && !spread; ++i) {
    for (std::size_t j = i + 1; j < cam.size(); ++j) {
      if (cam[i].cross(cam[j]).norm() >= kCollinearTol) {
        spread = true;
        break;
      }
    }
  }
  if (!spread) throw Error("align_pose: observed directions are collinear");

  Eigen::Matrix3d b = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < cam.size(); ++k) b += ct[k] * cam[k].transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  Pose pose;
  pose.rotation = svd.matrixU() * fix * svd.matrixV().transpose();
  pose.position = tree.airway(match.parent_id).distal() - pose.rotation * match.bif_point_cam;
  return pose;
}

std::optional<AirwayNetEstimate> localize_airwaynet(const ObservationMatrix& obs, const AirwayTree& tree,
                                                    double threshold) {
  auto match = find_consistent_bifurcation(obs, tree, threshold);
  if (!match) return std::nullopt;
  try {
    Pose pose = align_pose(*match, tree);
    return AirwayNetEstimate{std::move(*match), pose};
  } catch (const Error&) {
    return std::nullopt;
  }
}

void FilterConfig::validate() const {
  if (n_candidates < 1) throw Error("filter: n_candidates must be at least 1");
  if (!(sigma_fit > 0.0) || !(sigma_ins > 0.0) || !(sigma_x > 0.0) || !(sigma_r > 0.0)) {
    throw Error("filter: sigmas must be positive");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("filter: threshold must lie in [0, 1]");
  if (!(child_match_tol > 0.0)) throw Error("filter: child_match_tol must be positive");
}

FilterConfig filter_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("filter config: ") + e.what());
  }
  if (!doc.is_object()) throw Error("filter config: expected an object");
  FilterConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_number()) throw Error("filter config." + key + ": expected a number");
    if (key == "n_candidates") cfg.n_candidates = value.get<int>();
    else if (key == "sigma_fit") cfg.sigma_fit = value.get<double>();
    else if (key == "sigma_ins") cfg.sigma_ins = value.get<double>();
    else if (key == "sigma_x") cfg.sigma_x = value.get<double>();
    else if (key == "sigma_r") cfg.sigma_r = value.get<double>();
    else if (key == "threshold") cfg.threshold = value.get<double>();
    else if (key == "child_match_tol") cfg.child_match_tol = value.get<double>();
    else throw Error("filter config: unknown field \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

double gaussian_density(double x, double sigma) {
  return std::exp(-0.5 * (x / sigma) * (x / sigma)) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

double p_gen(int d) {
  if (d < 0) throw Error("p_gen: negative distance");
  return d <= 3 ? std::pow(10.0, 1 - d) : 0.0;
}

std::vector<FitResult> fit_assignments(const Eigen::Vector3d& obs_parent_dir,
                                       const std::vector<Eigen::Vector3d>& obs_child_dirs, AirwayId candidate,
                                       const AirwayTree& tree, double sigma_fit) {
  if (obs_child_dirs.size() < 2) throw Error("fit_probability: need at least two observed children");
  std::vector<AirwayId> cands = tree.airway(candidate).children;
  if (cands.size() < 2) throw Error("fit_probability: candidate " + std::to_string(candidate) + " is not a bifurcation");
  std::sort(cands.begin(), cands.end());

  const Eigen::Vector3d axis = tree.distal_direction(candidate);
  const Eigen::Matrix3d r0 = align_directions(obs_parent_dir.normalized(), axis);
  const std::size_t n = obs_child_dirs.size();
  std::vector<Eigen::Vector3d> t(n);
  for (std::size_t k = 0; k < n; ++k) t[k] = r0 * obs_child_dirs[k].normalized();
  std::vector<Eigen::Vector3d> c(cands.size());
  for (std::size_t m = 0; m < cands.size(); ++m) c[m] = tree.proximal_direction(cands[m]);

  const std::size_t matched = std::min(n, cands.size());
  std::vector<FitResult> out;
  std::vector<int> pick(n, -1);  // index into cands, -1 unmatched
  std::vector<char> used(cands.size(), 0);

  auto evaluate = [&] {
    double a_sum = 0.0;
    double b_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (pick[k] < 0) continue;
      const Eigen::Vector3d& ck = c[pick[k]];
      const Eigen::Vector3d t_perp = t[k] - t[k].dot(axis) * axis;
      a_sum += t_perp.dot(ck);
      b_sum += axis.cross(t[k]).dot(ck);
    }
    const double phi = std::atan2(b_sum, a_sum);
    const Eigen::Matrix3d roll = axis_angle(axis, phi);
    double p = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (pick[k] < 0) continue;
      p += gaussian_density(1.0 - (roll * t[k]).dot(c[pick[k]]), sigma_fit);
    }
    FitResult fit;
    fit.p_fit = p / static_cast<double>(matched);
    fit.roll = phi;
    fit.rotation = roll * r0;
    fit.assignment.assign(n, -1);
    for (std::size_t k = 0; k < n; ++k) {
      if (pick[k] >= 0) fit.assignment[k] = cands[pick[k]];
    }
    out.push_back(std::move(fit));
  };

  auto recurse = [&](std::size_t k, std::size_t assigned, auto&& self) -> void {
    if (k == n) {
      if (assigned == matched) evaluate();
      return;
    }
    if (n - k > matched - assigned) {
      pick[k] = -1;
      self(k + 1, assigned, self);
    }
    if (assigned < matched) {
      for (std::size_t m = 0; m < cands.size(); ++m) {
        if (used[m]) continue;
        used[m] = 1;
        pick[k] = static_cast<int>(m);
        self(k + 1, assigned + 1, self);
        used[m] = 0;
        pick[k] = -1;
      }
    }
  };
  recurse(0, 0, recurse);
  return out;
}

FitResult fit_probability(const Eigen::Vector3d& obs_parent_dir, const std::vector<Eigen::Vector3d>& obs_child_dirs,
                          AirwayId candidate, const AirwayTree& tree, double sigma_fit) {
  std::vector<FitResult> all = fit_assignments(obs_parent_dir, obs_child_dirs, candidate, tree, sigma_fit);
  // first maximum = lexicographically smallest assignment
  std::size_t best = 0;
  for (std::size_t i = 1; i < all.size(); ++i) {
    if (all[i].p_fit > all[best].p_fit) best = i;
  }
  return std::move(all[best]);
}

std::vector<double> airway_prior_table(const AirwayTree& tree, const std::vector<AirwayId>& prev_visible) {
  std::vector<double> table(tree.size(), 1.0);
  if (prev_visible.empty()) return table;
  double total = 0.0;
  for (AirwayId i = 0; i < tree.size(); ++i) {
    double s = 0.0;
    for (AirwayId j : prev_visible) s += p_gen(generation_distance(tree, i, j));
    table[i] = s;
    total += s;
  }
  for (double& v : table) v /= total;
  return table;
}

PriorTerms prior_probability(AirwayId candidate, const AirwayTree& tree, double u_ins, double y_pz,
                             const Pose& candidate_pose, const FilterState& state,
                             const std::vector<double>* prior_table) {
  const FilterConfig& cfg = state.config;
  PriorTerms p;
  p.p_ins = gaussian_density(u_ins + y_pz - tree.z_bif(candidate), cfg.sigma_ins);
  if (!state.prev_visible_ids.empty()) {
    if (prior_table) {
      p.p_a = prior_table->at(candidate);
    } else {
      p.p_a = airway_prior_table(tree, state.prev_visible_ids).at(candidate);
    }
  }
  if (state.prev_pose) {
    p.p_x = gaussian_density((candidate_pose.position - state.prev_pose->position).norm(), cfg.sigma_x);
    double roll = std::numbers::pi;
    try {
      roll = pose_errors(candidate_pose, *state.prev_pose).roll * std::numbers::pi / 180.0;
    } catch (const Error&) {
    }
    p.p_r = gaussian_density(roll, cfg.sigma_r);
  }
  return p;
}

std::optional<UnlabeledBifurcation> extract_bifurcation(const UnlabeledObservation& obs, const FilterConfig& cfg) {
  const auto& rows = obs.rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].p_has_vis_child < cfg.threshold || rows[i].p_is_vis < cfg.threshold) continue;
    const Eigen::Vector3d bif = rows[i].y_p;
    UnlabeledBifurcation out;
    out.parent_row = static_cast<int>(i);
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (j == i || rows[j].p_is_vis < cfg.threshold) continue;
      const Eigen::Vector3d d = alpha_beta_to_direction(rows[j].y_d);
      const Eigen::Vector3d rel = rows[j].y_p - bif;
      const double s = rel.dot(d);
      const double dist = s <= 0.0 ? rel.norm() : (rel - s * d).norm();
      if (dist <= cfg.child_match_tol) out.child_rows.push_back(static_cast<int>(j));
    }
    if (out.child_rows.size() >= 2) return out;
  }
  return std::nullopt;
}

std::vector<CandidateScore> score_candidates(const UnlabeledObservation& obs, const UnlabeledBifurcation& bif,
                                             double u_ins, const AirwayTree& tree, const FilterState& state) {
  const ObservationRow& parent = obs.rows.at(bif.parent_row);
  const Eigen::Vector3d parent_dir = alpha_beta_to_direction(parent.y_d);
  std::vector<Eigen::Vector3d> child_dirs;
  for (int r : bif.child_rows) child_dirs.push_back(alpha_beta_to_direction(obs.rows.at(r).y_d));
  const std::vector<double> table = airway_prior_table(tree, state.prev_visible_ids);

  std::vector<CandidateScore> out;
  out.reserve(tree.bifurcations().size());
  for (AirwayId b : tree.bifurcations()) {
    std::optional<CandidateScore> best;
    for (FitResult& fit : fit_assignments(parent_dir, child_dirs, b, tree, state.config.sigma_fit)) {
      CandidateScore cs;
      cs.bifurcation = b;
      cs.fit = std::move(fit);
      BifurcationMatch m;
      m.parent_id = b;
      m.obs_parent = parent;
      m.bif_point_cam = parent.y_p;
      for (std::size_t k = 0; k < bif.child_rows.size(); ++k) {
        if (cs.fit.assignment[k] < 0) continue;
        m.child_ids.push_back(cs.fit.assignment[k]);
        m.obs_children.push_back(obs.rows[bif.child_rows[k]]);
      }
      try {
        cs.pose = align_pose(m, tree);
      } catch (const Error&) {
        cs.pose.rotation = cs.fit.rotation;
        cs.pose.position = tree.airway(b).distal() - cs.fit.rotation * parent.y_p;
      }
      cs.prior = prior_probability(b, tree, u_ins, parent.y_p.z(), cs.pose, state, &table);
      if (!best || cs.posterior() > best->posterior()) best = std::move(cs);
    }
    out.push_back(std::move(*best));
  }
  return out;
}

FilterResult filter_step(const UnlabeledObservation& obs, double u_ins, const AirwayTree& tree, FilterState& state) {
  FilterResult result;
  const auto bif = extract_bifurcation(obs, state.config);
  if (!bif || tree.bifurcations().empty()) return result;

  std::vector<CandidateScore> scores = score_candidates(obs, *bif, u_ins, tree, state);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  // stable: ties keep ascending bifurcation ID
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].prior.total() > scores[b].prior.total();
  });
  const std::size_t n = std::min<std::size_t>(state.config.n_candidates, order.size());
  std::size_t best = order[0];
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t i = order[k];
    const double pi = scores[i].posterior();
    const double pb = scores[best].posterior();
    if (pi > pb || (pi == pb && scores[i].bifurcation < scores[best].bifurcation)) best = i;
  }
  const CandidateScore& win = scores[best];
  if (!(win.posterior() > 0.0)) return result;

  result.estimate = win.pose;
  result.parent = win.bifurcation;
  result.children = win.fit.assignment;
  result.child_rows = bif->child_rows;
  result.parent_row = bif->parent_row;
  result.posterior = win.posterior();

  state.prev_pose = win.pose;
  state.prev_visible_ids = {win.bifurcation};
  for (AirwayId c : win.fit.assignment) {
    if (c >= 0) state.prev_visible_ids.push_back(c);
  }
  return result;
}

}  // namespace bronchonav
