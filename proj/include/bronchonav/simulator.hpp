#pragma once

#include "bronchonav/control.hpp"
#include "bronchonav/episode_log.hpp"
#include "bronchonav/localization.hpp"
#include "bronchonav/perception.hpp"
#include "bronchonav/skeleton.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bronchonav {

enum class WallMode { kClamp, kSlide };

struct SimConfig {
  double dt = 0.02;                 // s
  int max_steps = 6000;
  double heading_rate_limit = 1.5;  // rad/s
  WallMode wall_mode = WallMode::kClamp;
  double k = 0.5;                   // articulation gain of the plant
  std::uint64_t seed = 1;

  void validate() const;
};

SimConfig sim_config_from_json(const std::string& text);

/// Result of one kinematic step.
struct StepResult {
  ScopeState state;
  bool collided = false;
};

/// Point-camera kinematics: rate-limited heading change in the camera frame,
/// advance along the new p_z, then the lumen constraint.
StepResult step(const ScopeState& state, const Command& cmd, const AirwayTree& tree, const SimConfig& cfg);

struct ScriptedFrame {
  Pose pose;
  double u_ins = 0.0;
  double roll = 0.0;
};

struct ScriptConfig {
  int frames = 600;
  double start_arc = 1.0;        // mm from the root's proximal point
  double chord_ahead = 5.0;      // mm, heading target along the path
  double roll_amplitude = 0.3;   // rad, sinusoidal roll over the path
};

/// Camera poses along the root-to-`leaf` centerline.
std::vector<ScriptedFrame> scripted_path(const AirwayTree& tree, AirwayId leaf, const ScriptConfig& cfg = {});

enum class LocalizerKind { kAirwayNet, kParticleFilter };

struct TrackingConfig {
  NoiseConfig noise;
  VisibilityConfig vis;
  FilterConfig filter;
  LocalizerKind localizer = LocalizerKind::kAirwayNet;
  double dt = 0.02;
};

EpisodeLog run_tracking_episode(const AirwayTree& tree, const std::vector<ScriptedFrame>& script,
                                const TrackingConfig& cfg);

struct DrivingConfig {
  NoiseConfig noise;
  VisibilityConfig vis;
  ControllerConfig controller;
  std::vector<AirwayId> targets;
  double start_depth = 5.0;  // mm into the root airway
};

/// Closed loop perception -> localization -> supervisor -> step until every
/// target is reached or max_steps elapse.
EpisodeLog run_driving_episode(const AirwayTree& tree, const DrivingConfig& cfg, const SimConfig& sim);

/// Re-runs localization on a logged tracking episode's observations.
/// Verifies the tree hash first.
EpisodeLog replay_localization(const EpisodeLog& log, const AirwayTree& tree, const FilterConfig& filter);

struct BenchmarkResult {
  long iterations = 0;
  double seconds = 0.0;
  double rate() const { return seconds > 0.0 ? iterations / seconds : 0.0; }
};

/// Times the perception -> localization -> supervisor loop along a scripted
/// path to a mid-tree leaf (sigma_pos 0.5 mm, sigma_dir 0.02 rad).
BenchmarkResult run_benchmark(const AirwayTree& tree, LocalizerKind localizer, double seconds,
                              std::uint64_t seed = 1);

std::string tracking_config_json(const TrackingConfig& cfg);
std::string driving_config_json(const DrivingConfig& cfg, const SimConfig& sim);

}  // namespace bronchonav
