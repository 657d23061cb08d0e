#pragma once

#include "bronchonav/geometry.hpp"
#include "bronchonav/perception.hpp"
#include "bronchonav/skeleton.hpp"

#include <optional>
#include <vector>

namespace bronchonav {

/// A parent airway whose bifurcation is seen together with >= 2 children.
struct BifurcationMatch {
  AirwayId parent_id = 0;
  std::vector<AirwayId> child_ids;
  ObservationRow obs_parent;
  std::vector<ObservationRow> obs_children;  // aligned with child_ids
  Eigen::Vector3d bif_point_cam = Eigen::Vector3d::Zero();
};

/// Labeled-path consistency check. Picks the airway with the largest
/// p_hasVisChild (ties: smallest |y_p|) among those with >= 2 skeleton children
/// above threshold.
std::optional<BifurcationMatch> find_consistent_bifurcation(const ObservationMatrix& obs, const AirwayTree& tree,
                                                            double threshold = 0.5);

/// Rigid alignment of the observed bifurcation onto the skeleton. The rotation
/// solves Wahba's problem over the parent and child directions.
/// Throws Error when all directions are collinear.
Pose align_pose(const BifurcationMatch& match, const AirwayTree& tree);

/// Per-frame labeled localization with no temporal state.
struct AirwayNetEstimate {
  BifurcationMatch match;
  Pose pose;
};
std::optional<AirwayNetEstimate> localize_airwaynet(const ObservationMatrix& obs, const AirwayTree& tree,
                                                    double threshold = 0.5);

struct FilterConfig {
  int n_candidates = 3;
  double sigma_fit = 0.1;   // on 1 - cosine
  double sigma_ins = 10.0;  // mm
  double sigma_x = 10.0;    // mm
  double sigma_r = 0.35;    // rad
  double threshold = 0.5;
  double child_match_tol = 3.0;  // mm, child line to bifurcation point

  void validate() const;
};

FilterConfig filter_config_from_json(const std::string& text);

struct FilterState {
  std::optional<Pose> prev_pose;
  std::vector<AirwayId> prev_visible_ids;
  FilterConfig config;
};

/// Zero-mean Gaussian density.
double gaussian_density(double x, double sigma);

/// Generation prior increment: 10^(1-d) for d <= 3, else 0.
double p_gen(int d);

struct FitResult {
  double p_fit = 0.0;
  double roll = 0.0;  // rad, about the candidate's parent axis
  /// Candidate child per observed child; -1 where unmatched.
  std::vector<AirwayId> assignment;
  /// Camera-to-CT rotation after aligning the parent direction and roll.
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

/// Measurement likelihood of a candidate bifurcation. Directions are unit
/// camera-frame vectors. Searches every injective assignment of observed to
/// candidate children (partial when there are more observed than candidate
/// children) with a closed-form roll per assignment.
FitResult fit_probability(const Eigen::Vector3d& obs_parent_dir, const std::vector<Eigen::Vector3d>& obs_child_dirs,
                          AirwayId candidate, const AirwayTree& tree, double sigma_fit);

/// Every assignment's fit, in lexicographic order of candidate child IDs.
std::vector<FitResult> fit_assignments(const Eigen::Vector3d& obs_parent_dir,
                                       const std::vector<Eigen::Vector3d>& obs_child_dirs, AirwayId candidate,
                                       const AirwayTree& tree, double sigma_fit);

struct PriorTerms {
  double p_ins = 1.0;
  double p_a = 1.0;
  double p_x = 1.0;
  double p_r = 1.0;
  double total() const { return p_ins * p_a * p_x * p_r; }
};

/// Normalized p_a over all airways given the previously visible set; all
/// ones when the set is empty.
std::vector<double> airway_prior_table(const AirwayTree& tree, const std::vector<AirwayId>& prev_visible);

/// Prior of a candidate bifurcation. `candidate_pose` is the pose implied by
/// the candidate (used for p_x and p_r); `y_pz` is the observed bifurcation
/// depth in the camera frame.
PriorTerms prior_probability(AirwayId candidate, const AirwayTree& tree, double u_ins, double y_pz,
                             const Pose& candidate_pose, const FilterState& state,
                             const std::vector<double>* prior_table = nullptr);

/// Candidate evaluated by the filter.
struct CandidateScore {
  AirwayId bifurcation = 0;
  FitResult fit;
  PriorTerms prior;
  Pose pose;
  double posterior() const { return fit.p_fit * prior.total(); }
};

/// Observed bifurcation extracted from an unlabeled observation.
struct UnlabeledBifurcation {
  int parent_row = 0;
  std::vector<int> child_rows;
};

/// First row (in ordering) with p_hasVisChild above threshold whose
/// bifurcation point is met by >= 2 other rows' back-extended lines.
std::optional<UnlabeledBifurcation> extract_bifurcation(const UnlabeledObservation& obs, const FilterConfig& cfg);

/// Fit, pose and prior of every skeleton bifurcation for one observation. Each
/// candidate keeps the assignment with the largest fit x prior.
std::vector<CandidateScore> score_candidates(const UnlabeledObservation& obs, const UnlabeledBifurcation& bif,
                                             double u_ins, const AirwayTree& tree, const FilterState& state);

struct FilterResult {
  std::optional<Pose> estimate;
  std::optional<AirwayId> parent;
  std::vector<AirwayId> children;  // assigned child per observed child row (-1 unmatched)
  std::vector<int> child_rows;     // observation rows of the children
  int parent_row = -1;
  double posterior = 0.0;
};

/// One particle-filter update. Without a visible bifurcation the result is
/// empty and the state is left unchanged.
FilterResult filter_step(const UnlabeledObservation& obs, double u_ins, const AirwayTree& tree, FilterState& state);

}  // namespace bronchonav
