#pragma once

#include "bronchonav/episode_log.hpp"
#include "bronchonav/geometry.hpp"
#include "bronchonav/perception.hpp"

#include <span>
#include <vector>

namespace bronchonav {

struct AirwayClassStats {
  AirwayId airway_id = 0;
  long frames_visible = 0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-airway classification at `threshold` across all frames of the logs.
/// Airways with no support and no predictions are left out. Throws Error for
/// logs without frames.
std::vector<AirwayClassStats> per_airway_f1(std::span<const EpisodeLog> logs, double threshold);
std::vector<AirwayClassStats> per_airway_f1(const EpisodeLog& log, double threshold);

/// Precision/recall scores of every frame in the logs, ready for a sweep.
std::vector<LabeledFrame> labeled_frames(std::span<const EpisodeLog> logs);

struct PRCurve {
  std::vector<double> thresholds;  // descending
  std::vector<double> precision;   // macro average over airways with support
  std::vector<double> recall;
  double auc = 0.0;
  std::vector<double> micro_precision;
  std::vector<double> micro_recall;
  double micro_auc = 0.0;
  int airways = 0;  // airways with support
};

/// Threshold grid 0, 0.01, ..., 1.
std::vector<double> default_thresholds();

/// Trapezoid area under a PR curve given in order of non-decreasing recall,
/// with the point (recall 0, precision 1) prepended.
double pr_auc(const std::vector<double>& recall, const std::vector<double>& precision);

PRCurve averaged_pr_curve(const ThresholdSweep& sweep);
/// Throws Error when no airway has support.
PRCurve averaged_pr_curve(std::span<const EpisodeLog> logs);

struct ErrorSummary {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // population
};

ErrorSummary summarize(std::vector<double> values);

struct TrackingReport {
  std::vector<double> times;
  std::vector<PoseErrors> errors;  // frames with a correctly labeled bifurcation
  int bifurcation_frames = 0;      // frames with any visible bifurcation
  ErrorSummary e_p, e_d, e_r;

  bool empty() const { return errors.empty(); }
};

/// Pose errors on frames whose assigned parent equals the visible bifurcation.
TrackingReport tracking_report(std::span<const EpisodeLog> logs);
TrackingReport tracking_report(const EpisodeLog& log);

struct DrivingSummary {
  int successes = 0;
  int trials = 0;
  double mean_completion_time = 0.0;  // successful trials
  double std_completion_time = 0.0;   // population
  int recoveries = 0;
  int collisions = 0;
};

/// Throws Error for an empty list.
DrivingSummary driving_summary(std::span<const EpisodeLog> logs);

}  // namespace bronchonav
