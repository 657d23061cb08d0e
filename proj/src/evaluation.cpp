#include "bronchonav/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bronchonav {

std::vector<LabeledFrame> labeled_frames(std::span<const EpisodeLog> logs) {
  std::vector<LabeledFrame> frames;
  for (const EpisodeLog& log : logs) {
    for (const FrameRecord& f : log.frames) {
      LabeledFrame lf;
      lf.scores = frame_scores(f, log.airway_count);
      lf.visible.assign(log.airway_count, 0);
      for (AirwayId id : f.truth_visible) {
        if (id >= 0 && id < log.airway_count) lf.visible[id] = 1;
      }
      frames.push_back(std::move(lf));
    }
  }
  return frames;
}

std::vector<AirwayClassStats> per_airway_f1(std::span<const EpisodeLog> logs, double threshold) {
  const std::vector<LabeledFrame> frames = labeled_frames(logs);
  if (frames.empty()) throw Error("per_airway_f1: no frames");
  const double tau[] = {threshold};
  const ThresholdSweep sweep = score_threshold_sweep(frames, tau);
  std::vector<AirwayClassStats> out;
  for (const AirwayCurve& c : sweep.airways) {
    AirwayClassStats s;
    s.airway_id = c.airway_id;
    s.frames_visible = c.support;
    s.tp = c.tp[0];
    s.fp = c.fp[0];
    s.fn = c.fn[0];
    if (s.frames_visible == 0 && s.tp + s.fp == 0) continue;
    s.precision = s.tp + s.fp > 0 ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
    s.recall = s.tp + s.fn > 0 ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0.0;
    // Count form of 2pr/(p+r); avoids rounding in the product.
    s.f1 = s.tp > 0 ? 2.0 * s.tp / (2.0 * s.tp + s.fp + s.fn) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::vector<AirwayClassStats> per_airway_f1(const EpisodeLog& log, double threshold) {
  return per_airway_f1(std::span<const EpisodeLog>(&log, 1), threshold);
}

std::vector<double> default_thresholds() {
  std::vector<double> t(101);
  for (int k = 0; k <= 100; ++k) t[k] = k / 100.0;
  return t;
}

double pr_auc(const std::vector<double>& recall, const std::vector<double>& precision) {
  if (recall.size() != precision.size()) throw Error("pr_auc: arrays differ in length");
  double area = 0.0;
  double r0 = 0.0;
  double p0 = 1.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    area += (recall[k] - r0) * 0.5 * (precision[k] + p0);
    r0 = recall[k];
    p0 = precision[k];
  }
  return area;
}

PRCurve averaged_pr_curve(const ThresholdSweep& sweep) {
  PRCurve curve;
  const std::size_t n = sweep.thresholds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sweep.thresholds[a] > sweep.thresholds[b]; });

  std::vector<const AirwayCurve*> supported;
  for (const AirwayCurve& c : sweep.airways) {
    if (c.support > 0) supported.push_back(&c);
  }
  if (supported.empty()) throw Error("averaged_pr_curve: no airway with support");
  curve.airways = static_cast<int>(supported.size());

  for (std::size_t k : order) {
    double p = 0.0;
    double r = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    for (const AirwayCurve* c : supported) {
      p += c->precision[k];
      r += c->recall[k];
      tp += c->tp[k];
      fn += c->fn[k];
    }
    for (const AirwayCurve& c : sweep.airways) fp += c.fp[k];
    curve.thresholds.push_back(sweep.thresholds[k]);
    curve.precision.push_back(p / supported.size());
    curve.recall.push_back(r / supported.size());
    curve.micro_precision.push_back(tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 1.0);
    curve.micro_recall.push_back(tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0);
  }
  curve.auc = pr_auc(curve.recall, curve.precision);
  curve.micro_auc = pr_auc(curve.micro_recall, curve.micro_precision);
  return curve;
}

PRCurve averaged_pr_curve(std::span<const EpisodeLog> logs) {
  if (logs.empty()) throw Error("averaged_pr_curve: no logs");
  const std::vector<LabeledFrame> frames = labeled_frames(logs);
  if (frames.empty()) throw Error("averaged_pr_curve: no frames");
  const std::vector<double> grid = default_thresholds();
  return averaged_pr_curve(score_threshold_sweep(frames, grid));
}

ErrorSummary summarize(std::vector<double> values) {
  ErrorSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / n);
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  s.median = values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
  return s;
}

TrackingReport tracking_report(std::span<const EpisodeLog> logs) {
  TrackingReport rep;
  std::vector<double> ep, ed, er;
  for (const EpisodeLog& log : logs) {
    for (const FrameRecord& f : log.frames) {
      if (!f.truth_bifurcation) continue;
      ++rep.bifurcation_frames;
      if (!f.estimate || !f.assigned || f.assigned->parent != *f.truth_bifurcation) continue;
      PoseErrors e;
      try {
        e = pose_errors(f.true_state.pose, *f.estimate);
      } catch (const Error&) {
        continue;
      }
      rep.times.push_back(f.t);
      rep.errors.push_back(e);
      ep.push_back(e.position);
      ed.push_back(e.direction);
      er.push_back(e.roll);
    }
  }
  rep.e_p = summarize(std::move(ep));
  rep.e_d = summarize(std::move(ed));
  rep.e_r = summarize(std::move(er));
  return rep;
}

TrackingReport tracking_report(const EpisodeLog& log) {
  return tracking_report(std::span<const EpisodeLog>(&log, 1));
}

DrivingSummary driving_summary(std::span<const EpisodeLog> logs) {
  if (logs.empty()) throw Error("driving_summary: no logs");
  DrivingSummary s;
  std::vector<double> times;
  for (const EpisodeLog& log : logs) {
    ++s.trials;
    s.recoveries += log.outcome.recoveries;
    s.collisions += log.outcome.collisions;
    if (log.outcome.success) {
      ++s.successes;
      times.push_back(log.outcome.completion_time);
    }
  }
  const ErrorSummary t = summarize(std::move(times));
  s.mean_completion_time = t.mean;
  s.std_completion_time = t.std;
  return s;
}

}  // namespace bronchonav
