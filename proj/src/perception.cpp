#include "bronchonav/perception.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace bronchonav {

namespace {

constexpr double kProbClamp = 1e-7;

class NoiseSource {
 public:
  NoiseSource(const NoiseConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng), zero_(cfg.is_zero()) {}

  bool zero() const { return zero_; }
  bool chance(double p) { return p > 0.0 && unit_(rng_) < p; }
  // (0.5, 1]
  double high() { return zero_ ? 1.0 : 1.0 - 0.5 * unit_(rng_); }
  // [0, 0.5)
  double low() { return zero_ ? 0.0 : 0.5 * unit_(rng_); }
  double positive_score() { return chance(cfg_.p_miss) ? low() : high(); }
  double negative_score() { return chance(cfg_.p_false) ? high() : low(); }

  Eigen::Vector3d position(const Eigen::Vector3d& y) {
    if (cfg_.sigma_pos <= 0.0) return y;
    return y + Eigen::Vector3d(gauss(cfg_.sigma_pos), gauss(cfg_.sigma_pos), gauss(cfg_.sigma_pos));
  }
  Eigen::Vector2d direction(const Eigen::Vector2d& y) {
    if (cfg_.sigma_dir <= 0.0) return y;
    return y + Eigen::Vector2d(gauss(cfg_.sigma_dir), gauss(cfg_.sigma_dir));
  }

 private:
  double gauss(double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng_); }

  const NoiseConfig& cfg_;
  Rng& rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  bool zero_;
};

// Airways within two hops of any visible airway.
std::vector<char> near_visible(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree) {
  std::vector<char> near(tree.size(), 0);
  auto mark = [&](AirwayId id, auto&& self, int hops) -> void {
    near[id] = 1;
    if (hops == 0) return;
    const Airway& a = tree.airway(id);
    if (a.parent) self(*a.parent, self, hops - 1);
    for (AirwayId c : a.children) self(c, self, hops - 1);
  };
  for (const auto& gt : truth) {
    if (gt.is_vis) mark(gt.airway_id, mark, 2);
  }
  return near;
}

// Camera-frame stand-in for an airway that is not visible: its distal point
// and distal direction.
void phantom_geometry(const Pose* pose, const AirwayTree& tree, AirwayId id, Eigen::Vector3d& y_p,
                      Eigen::Vector2d& y_d) {
  if (!pose) {
    y_p = Eigen::Vector3d(0.0, 0.0, 15.0);
    y_d = Eigen::Vector2d::Zero();
    return;
  }
  y_p = pose->to_camera(tree.airway(id).distal());
  const Eigen::Vector3d t = pose->rotation.transpose() * tree.distal_direction(id);
  y_d = {std::atan2(-t.y(), t.z()), std::asin(std::clamp(t.x(), -1.0, 1.0))};
}

ObservationMatrix airwaynet_impl(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree,
                                 const NoiseConfig& noise, Rng& rng, const Pose* pose) {
  ObservationMatrix out(tree.max_rows());
  NoiseSource src(noise, rng);
  const std::vector<char> near = src.zero() ? std::vector<char>() : near_visible(truth, tree);

  for (AirwayId id = 0; id < tree.size(); ++id) {
    const AirwayGroundTruth& gt = truth[id];
    ObservationRow& row = out.rows[id];
    const bool has_children = !tree.airway(id).is_leaf();
    if (gt.is_vis) {
      row.p_is_vis = src.positive_score();
      if (gt.has_vis_child) {
        row.p_has_vis_child = src.positive_score();
      } else {
        row.p_has_vis_child = has_children ? src.negative_score() : src.low();
      }
      row.y_p = src.position(gt.y_p);
      row.y_d = src.direction(gt.y_d);
    } else if (!src.zero() && near[id]) {
      row.p_is_vis = src.negative_score();
      row.p_has_vis_child = src.low();
      if (row.p_is_vis > 0.5) {
        phantom_geometry(pose, tree, id, row.y_p, row.y_d);
        row.y_p = src.position(row.y_p);
        row.y_d = src.direction(row.y_d);
      }
    }
  }

  if (noise.p_swap > 0.0) {
    for (AirwayId id = 0; id < tree.size(); ++id) {
      const auto& children = tree.airway(id).children;
      if (children.size() < 2) continue;
      const bool any_visible = std::any_of(children.begin(), children.end(),
                                           [&](AirwayId c) { return truth[c].is_vis; });
      if (any_visible && src.chance(noise.p_swap)) std::swap(out.rows[children[0]], out.rows[children[1]]);
    }
  }
  return out;
}

UnlabeledObservation bifurcationnet_impl(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree,
                                         const NoiseConfig& noise, Rng& rng, const Pose* pose) {
  NoiseSource src(noise, rng);
  const std::vector<char> near = src.zero() ? std::vector<char>() : near_visible(truth, tree);
  std::vector<ObservationRow> rows;
  for (AirwayId id = 0; id < tree.size(); ++id) {
    const AirwayGroundTruth& gt = truth[id];
    ObservationRow row;
    if (gt.is_vis) {
      if (src.chance(noise.p_miss)) continue;
      row.p_is_vis = src.high();
      row.p_has_vis_child = gt.has_vis_child ? src.positive_score() : src.low();
      row.y_p = src.position(gt.y_p);
      row.y_d = src.direction(gt.y_d);
    } else if (!src.zero() && near[id] && src.chance(noise.p_false)) {
      row.p_is_vis = src.high();
      row.p_has_vis_child = src.low();
      phantom_geometry(pose, tree, id, row.y_p, row.y_d);
      row.y_p = src.position(row.y_p);
      row.y_d = src.direction(row.y_d);
    } else {
      continue;
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ObservationRow& a, const ObservationRow& b) {
    return ordering_key(a) < ordering_key(b);
  });
  if (rows.size() > UnlabeledObservation::kMaxRows) rows.resize(UnlabeledObservation::kMaxRows);
  return UnlabeledObservation{std::move(rows)};
}

}  // namespace

std::pair<double, double> ordering_key(const ObservationRow& row) {
  const Eigen::Vector3d d = alpha_beta_to_direction(row.y_d);
  return {std::round(row.y_p.norm()), angle_between(d, Eigen::Vector3d::UnitZ())};
}

void NoiseConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(sigma_pos >= 0.0) || !(sigma_dir >= 0.0)) throw Error("noise: sigmas must be non-negative");
  if (!prob(p_miss) || !prob(p_false) || !prob(p_swap)) {
    throw Error("noise: probabilities must lie in [0, 1]");
  }
}

NoiseConfig noise_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("noise config: ") + e.what());
  }
  if (!doc.is_object()) throw Error("noise config: expected an object");
  NoiseConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") {
      if (!value.is_number_integer()) throw Error("noise config.seed: expected an integer");
      cfg.seed = value.get<std::uint64_t>();
      continue;
    }
    if (!value.is_number()) throw Error("noise config." + key + ": expected a number");
    const double v = value.get<double>();
    if (key == "sigma_pos") cfg.sigma_pos = v;
    else if (key == "sigma_dir") cfg.sigma_dir = v;
    else if (key == "p_miss") cfg.p_miss = v;
    else if (key == "p_false") cfg.p_false = v;
    else if (key == "p_swap") cfg.p_swap = v;
    else throw Error("noise config: unknown field \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

ObservationMatrix oracle_airwaynet(const Pose& pose, const AirwayTree& tree, const VisibilityConfig& vis,
                                   const NoiseConfig& noise, Rng& rng) {
  return airwaynet_impl(ground_truth_observation(pose, vis, tree), tree, noise, rng, &pose);
}

ObservationMatrix oracle_airwaynet(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree,
                                   const NoiseConfig& noise, Rng& rng, const Pose* pose) {
  return airwaynet_impl(truth, tree, noise, rng, pose);
}

UnlabeledObservation oracle_bifurcationnet(const Pose& pose, const AirwayTree& tree,
                                           const VisibilityConfig& vis, const NoiseConfig& noise, Rng& rng) {
  return bifurcationnet_impl(ground_truth_observation(pose, vis, tree), tree, noise, rng, &pose);
}

UnlabeledObservation oracle_bifurcationnet(const std::vector<AirwayGroundTruth>& truth,
                                           const AirwayTree& tree, const NoiseConfig& noise, Rng& rng,
                                           const Pose* pose) {
  return bifurcationnet_impl(truth, tree, noise, rng, pose);
}

// ---------------------------------------------------------------------------
// Loss

void LossWeights::validate() const {
  if (!(c5 > 0.0)) throw Error("loss weights: c5 must be positive");
  if (!(c6 > c5)) throw Error("loss weights: c6 must exceed c5");
}

double depth_weight(const Eigen::Vector3d& y_p, const LossWeights& w) {
  return std::max(w.c5, w.c6 - w.c7 * y_p.norm());
}

namespace {

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error("loss: probability outside [0, 1]");
}

// Labels are exact 0/1, so each term keeps only the side its label selects;
// the log argument is floored at kProbClamp.
double cross_entropy(bool label, double p, bool one_sided) {
  if (label) return -std::log(std::max(p, kProbClamp));
  if (one_sided) return 0.0;
  return -std::log(std::max(1.0 - p, kProbClamp));
}

}  // namespace

double airwaynet_loss(const ObservationMatrix& pred, const std::vector<AirwayGroundTruth>& truth,
                      const LossWeights& w) {
  w.validate();
  if (static_cast<int>(truth.size()) > pred.size()) throw Error("loss: prediction has fewer rows than truth");
  double total = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    const ObservationRow& row = pred.rows[i];
    check_probability(row.p_is_vis);
    check_probability(row.p_has_vis_child);
    const bool in_tree = i < static_cast<int>(truth.size());
    const bool vis = in_tree && truth[i].is_vis;
    const bool child = in_tree && truth[i].has_vis_child;
    const double f = vis ? depth_weight(truth[i].y_p, w) : w.c5;
    double term = w.c1 * cross_entropy(vis, row.p_is_vis, w.one_sided_ce) +
                  w.c2 * cross_entropy(child, row.p_has_vis_child, w.one_sided_ce);
    if (vis) {
      term += w.c3 * (row.y_p - truth[i].y_p).squaredNorm();
      term += w.c4 * (row.y_d - truth[i].y_d).squaredNorm();
    }
    total += f * term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Threshold sweep

ThresholdSweep score_threshold_sweep(std::span<const LabeledFrame> frames, std::span<const double> thresholds) {
  if (frames.empty()) throw Error("threshold sweep: empty sequence");
  struct Entry {
    double score;
    bool visible;
  };
  std::map<AirwayId, std::vector<Entry>> per_airway;
  for (const LabeledFrame& f : frames) {
    const std::size_t n = std::max(f.scores.size(), f.visible.size());
    for (std::size_t id = 0; id < n; ++id) {
      const double s = id < f.scores.size() ? f.scores[id] : 0.0;
      const bool v = id < f.visible.size() && f.visible[id];
      if (s > 0.0 || v) per_airway[static_cast<AirwayId>(id)].push_back({s, v});
    }
  }

  ThresholdSweep out;
  out.thresholds.assign(thresholds.begin(), thresholds.end());
  for (auto& [id, entries] : per_airway) {
    AirwayCurve curve;
    curve.airway_id = id;
    curve.support = std::count_if(entries.begin(), entries.end(), [](const Entry& e) { return e.visible; });
    for (double tau : thresholds) {
      long tp = 0;
      long fp = 0;
      for (const Entry& e : entries) {
        if (e.score > 0.0 && e.score >= tau) (e.visible ? tp : fp) += 1;
      }
      const long fn = curve.support - tp;
      curve.tp.push_back(tp);
      curve.fp.push_back(fp);
      curve.fn.push_back(fn);
      curve.precision.push_back(tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0);
      curve.recall.push_back(curve.support > 0 ? static_cast<double>(tp) / curve.support : 0.0);
    }
    out.airways.push_back(std::move(curve));
  }
  return out;
}

ThresholdSweep score_threshold_sweep(std::span<const ObservationMatrix> preds,
                                     std::span<const std::vector<AirwayGroundTruth>> truth,
                                     std::span<const double> thresholds) {
  if (preds.size() != truth.size()) throw Error("threshold sweep: sequences are not aligned");
  std::vector<LabeledFrame> frames(preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) {
    frames[k].scores.resize(preds[k].size());
    for (int i = 0; i < preds[k].size(); ++i) frames[k].scores[i] = preds[k].rows[i].p_is_vis;
    frames[k].visible.resize(truth[k].size());
    for (std::size_t i = 0; i < truth[k].size(); ++i) frames[k].visible[i] = truth[k][i].is_vis;
  }
  return score_threshold_sweep(frames, thresholds);
}

}  // namespace bronchonav
