#pragma once

#include "bronchonav/geometry.hpp"
#include "bronchonav/skeleton.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace bronchonav {

using Rng = std::mt19937_64;

/// One airway's network-style output: two confidences plus the camera-frame
/// furthest visible point and direction.
struct ObservationRow {
  double p_is_vis = 0.0;
  double p_has_vis_child = 0.0;
  Eigen::Vector3d y_p = Eigen::Vector3d::Zero();  // mm
  Eigen::Vector2d y_d = Eigen::Vector2d::Zero();  // (alpha, beta), rad

  bool operator==(const ObservationRow&) const = default;
};

/// Labeled output: one row per airway ID up to the tree's row capacity.
struct ObservationMatrix {
  std::vector<ObservationRow> rows;

  ObservationMatrix() = default;
  explicit ObservationMatrix(int row_count) : rows(row_count) {}
  int size() const { return static_cast<int>(rows.size()); }
  const ObservationRow& operator[](AirwayId id) const { return rows.at(id); }
  ObservationRow& operator[](AirwayId id) { return rows.at(id); }

  bool operator==(const ObservationMatrix&) const = default;
};

/// Unlabeled output: up to four visible airways, ordered by `ordering_key`.
struct UnlabeledObservation {
  static constexpr int kMaxRows = 4;
  std::vector<ObservationRow> rows;

  bool operator==(const UnlabeledObservation&) const = default;
};

/// Lexicographic ordering key for unlabeled rows: camera distance rounded to
/// 1 mm, then the angle between the airway direction and the optical axis.
std::pair<double, double> ordering_key(const ObservationRow& row);

struct NoiseConfig {
  double sigma_pos = 0.0;  // mm, per y_p component
  double sigma_dir = 0.0;  // rad, per alpha/beta
  double p_miss = 0.0;     // visible airway reported below 0.5
  double p_false = 0.0;    // nearby invisible airway reported above 0.5
  double p_swap = 0.0;     // sibling rows exchanged
  std::uint64_t seed = 0;

  bool is_zero() const {
    return sigma_pos == 0.0 && sigma_dir == 0.0 && p_miss == 0.0 && p_false == 0.0 && p_swap == 0.0;
  }
  void validate() const;
};

NoiseConfig noise_config_from_json(const std::string& text);

/// Labeled observation emulating a network that classifies every airway.
/// Deterministic for a fixed RNG state; zero noise consumes no randomness.
ObservationMatrix oracle_airwaynet(const Pose& pose, const AirwayTree& tree, const VisibilityConfig& vis,
                                   const NoiseConfig& noise, Rng& rng);
/// Same, from precomputed ground truth. `pose` places false positives; without
/// it they sit on the optical axis.
ObservationMatrix oracle_airwaynet(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree,
                                   const NoiseConfig& noise, Rng& rng, const Pose* pose = nullptr);

/// Unlabeled observation of up to four visible airways with IDs stripped.
UnlabeledObservation oracle_bifurcationnet(const Pose& pose, const AirwayTree& tree,
                                           const VisibilityConfig& vis, const NoiseConfig& noise, Rng& rng);
UnlabeledObservation oracle_bifurcationnet(const std::vector<AirwayGroundTruth>& truth,
                                           const AirwayTree& tree, const NoiseConfig& noise, Rng& rng,
                                           const Pose* pose = nullptr);

/// Owns the RNG so repeated calls continue one deterministic stream.
class PerceptionOracle {
 public:
  PerceptionOracle(NoiseConfig noise, VisibilityConfig vis)
      : noise_(noise), vis_(vis), rng_(noise.seed) {}

  ObservationMatrix airwaynet(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree) {
    return oracle_airwaynet(truth, tree, noise_, rng_);
  }
  UnlabeledObservation bifurcationnet(const std::vector<AirwayGroundTruth>& truth, const AirwayTree& tree) {
    return oracle_bifurcationnet(truth, tree, noise_, rng_);
  }

  const NoiseConfig& noise() const { return noise_; }
  const VisibilityConfig& visibility() const { return vis_; }

 private:
  NoiseConfig noise_;
  VisibilityConfig vis_;
  Rng rng_;
};

struct LossWeights {
  double c1 = 2.0;   // isVis cross entropy
  double c2 = 2.0;   // hasVisChild cross entropy
  double c3 = 1.0;   // position regression
  double c4 = 10.0;  // direction regression
  double c5 = 0.1;   // depth weight floor
  double c6 = 6.0;   // depth weight intercept
  double c7 = 0.2;   // depth weight slope, 1/mm
  bool one_sided_ce = false;  // only the positive-label CE terms

  void validate() const;
};

/// Depth weight max(c5, c6 - c7 |y_p|).
double depth_weight(const Eigen::Vector3d& y_p, const LossWeights& w);

/// Weighted training loss of a labeled prediction against ground truth.
/// Throws Error for probabilities outside [0, 1].
double airwaynet_loss(const ObservationMatrix& pred, const std::vector<AirwayGroundTruth>& truth,
                      const LossWeights& w = {});

/// Scores and visibility labels of one frame, index = airway ID.
struct LabeledFrame {
  std::vector<double> scores;
  std::vector<char> visible;
};

/// Per-airway counts on a threshold grid. A prediction is positive when
/// score >= threshold and score > 0.
struct AirwayCurve {
  AirwayId airway_id = 0;
  long support = 0;  // frames with the airway visible
  std::vector<long> tp, fp, fn;
  std::vector<double> precision, recall;  // precision is 1 when nothing is predicted
};

struct ThresholdSweep {
  std::vector<double> thresholds;
  std::vector<AirwayCurve> airways;  // airways with support or any positive score
};

ThresholdSweep score_threshold_sweep(std::span<const LabeledFrame> frames, std::span<const double> thresholds);
ThresholdSweep score_threshold_sweep(std::span<const ObservationMatrix> preds,
                                     std::span<const std::vector<AirwayGroundTruth>> truth,
                                     std::span<const double> thresholds);

}  // namespace bronchonav
