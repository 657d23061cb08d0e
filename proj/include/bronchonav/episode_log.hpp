#pragma once

#include "bronchonav/control.hpp"
#include "bronchonav/geometry.hpp"
#include "bronchonav/perception.hpp"
#include "bronchonav/skeleton.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bronchonav {

struct ScopeState {
  Pose pose;
  double u_ins = 0.0;  // mm, integrated insertion command
  double roll = 0.0;   // rad
  Eigen::Vector4d tendons = Eigen::Vector4d::Zero();
};

/// Localizer labels for one frame. For unlabeled observations the row
/// indices point into the frame's unlabeled rows.
struct Assignment {
  AirwayId parent = -1;
  std::vector<AirwayId> children;  // -1 where an observed child went unmatched
  int parent_row = -1;
  std::vector<int> child_rows;
};

struct FrameRecord {
  double t = 0.0;
  ScopeState true_state;
  bool labeled = true;
  std::vector<std::pair<AirwayId, ObservationRow>> rows;  // labeled: rows with any nonzero score
  std::vector<ObservationRow> unlabeled_rows;
  std::vector<AirwayId> truth_visible;
  std::vector<AirwayId> truth_has_vis_child;
  std::optional<AirwayId> truth_bifurcation;
  std::optional<Pose> estimate;
  std::optional<Assignment> assigned;
  std::optional<Command> command;
};

struct EpisodeOutcome {
  bool success = false;
  double completion_time = 0.0;  // s
  int recoveries = 0;
  int collisions = 0;
};

struct EpisodeLog {
  std::string kind;  // "tracking" or "driving"
  std::string tree_hash;
  int airway_count = 0;
  std::uint64_t seed = 0;
  std::string config_json = "{}";  // configs used, as a JSON object
  std::vector<FrameRecord> frames;
  EpisodeOutcome outcome;
};

/// Sparse copy of a labeled matrix: rows with a nonzero score.
std::vector<std::pair<AirwayId, ObservationRow>> sparse_rows(const ObservationMatrix& obs, int airway_count);

/// Per-airway scores of one frame (index = airway ID). Labeled frames use
/// p_isVis; unlabeled frames score only the airways the localizer assigned.
std::vector<double> frame_scores(const FrameRecord& frame, int airway_count);

/// JSON Lines: a header record, one record per frame, an outcome record.
std::string episode_to_jsonl(const EpisodeLog& log);
EpisodeLog episode_from_jsonl(const std::string& text);
void write_episode(const EpisodeLog& log, const std::filesystem::path& path);
EpisodeLog read_episode(const std::filesystem::path& path);

/// Throws Error when the log was produced on a different tree.
void verify_tree_hash(const EpisodeLog& log, const AirwayTree& tree);

}  // namespace bronchonav
