#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bronchonav {

/// Raised for malformed input: bad files, invalid configs, unknown IDs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using AirwayId = int;

/// One branch of the airway tree. The centerline runs proximal to distal; the
/// last point is this airway's bifurcation (or terminus for a leaf).
struct Airway {
  AirwayId id = 0;
  std::optional<AirwayId> parent;
  std::vector<AirwayId> children;
  std::vector<Eigen::Vector3d> centerline;
  std::vector<double> radius;

  const Eigen::Vector3d& proximal() const { return centerline.front(); }
  const Eigen::Vector3d& distal() const { return centerline.back(); }
  bool is_leaf() const { return children.empty(); }

  bool operator==(const Airway& other) const;
};

/// Centerline sample used for visibility tests. Spacing along the polyline is
/// at most `kSampleSpacing`; every polyline vertex is also a sample.
struct CenterlineSample {
  Eigen::Vector3d point;
  Eigen::Vector3d tangent;  // unit, distal-pointing
  double arc_length = 0.0;  // from the airway's proximal point
};

/// Closest point on the lumen centerline network to a query point.
struct LumenFoot {
  AirwayId airway = 0;
  Eigen::Vector3d point;
  double distance = 0.0;
  double radius = 0.0;  // interpolated lumen radius at the foot point
};

/// Immutable branched centerline tree ("lung skeleton"). Airway IDs are dense
/// in [0, size()).
class AirwayTree {
 public:
  static constexpr double kSampleSpacing = 0.5;  // mm
  static constexpr int kDefaultMaxRows = 500;

  AirwayTree() = default;

  /// Validates every structural invariant; throws Error naming the offending
  /// airway when one is violated.
  AirwayTree(std::vector<Airway> airways, AirwayId root_id, int max_rows = kDefaultMaxRows);

  int size() const { return static_cast<int>(airways_.size()); }
  AirwayId root_id() const { return root_id_; }
  int max_rows() const { return max_rows_; }
  bool contains(AirwayId id) const { return id >= 0 && id < size(); }

  const Airway& airway(AirwayId id) const;
  const std::vector<Airway>& airways() const { return airways_; }

  /// Depth below the root (root = 0).
  int generation(AirwayId id) const;
  double length(AirwayId id) const;

  /// Polyline length from the root's proximal point to this airway's distal point.
  double z_bif(AirwayId id) const;

  /// Unit direction of the last segment (tangent at the bifurcation).
  Eigen::Vector3d distal_direction(AirwayId id) const;
  /// Unit direction of the first segment (tangent leaving the parent's bifurcation).
  Eigen::Vector3d proximal_direction(AirwayId id) const;

  const std::vector<CenterlineSample>& samples(AirwayId id) const;
  /// Bounding sphere of the airway centerline, used for visibility culling.
  const Eigen::Vector3d& bound_center(AirwayId id) const;
  double bound_radius(AirwayId id) const;

  /// Airways with at least two children.
  const std::vector<AirwayId>& bifurcations() const { return bifurcations_; }

  /// Root-first path of IDs from the root to `id` inclusive.
  std::vector<AirwayId> path_from_root(AirwayId id) const;

  /// Nearest point on any airway centerline.
  LumenFoot nearest_centerline(const Eigen::Vector3d& q) const;
  /// True if `q` lies inside some airway's lumen (distance to its centerline no
  /// larger than the local radius).
  bool inside_lumen(const Eigen::Vector3d& q) const;
  /// Lumen whose boundary is closest to `q` (smallest distance - radius).
  LumenFoot nearest_lumen(const Eigen::Vector3d& q) const;

  bool operator==(const AirwayTree& other) const;

 private:
  void validate() const;
  void build_caches();

  std::vector<Airway> airways_;
  AirwayId root_id_ = 0;
  int max_rows_ = kDefaultMaxRows;

  std::vector<int> generation_;
  std::vector<double> length_;
  std::vector<double> z_bif_;
  std::vector<std::vector<CenterlineSample>> samples_;
  std::vector<Eigen::Vector3d> bound_center_;
  std::vector<double> bound_radius_;
  std::vector<AirwayId> bifurcations_;
};

/// Undirected hop distance between two airways in the tree graph.
int generation_distance(const AirwayTree& tree, AirwayId i, AirwayId j);

/// Polyline length from the root's proximal point to airway i's distal point.
double insertion_length_to_bifurcation(const AirwayTree& tree, AirwayId i);

struct TreeGenConfig {
  int depth = 5;                       // generations, root included
  double branch_angle_min = 0.436;     // rad, per child from the parent axis (25 deg)
  double branch_angle_max = 0.785;     // rad (45 deg)
  double min_sibling_angle = 0.873;    // rad (50 deg)
  double length_min = 20.0;            // mm, non-root airways
  double length_max = 35.0;            // mm
  double trachea_length = 60.0;        // mm
  double trachea_radius = 9.0;         // mm
  double radius_decay = 0.8;           // per generation
  int max_airways = 0;                 // 0 = full binary tree
  int max_rows = AirwayTree::kDefaultMaxRows;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Procedural binary airway tree. The trachea starts at the origin and runs
/// along +z; every airway is a straight segment.
AirwayTree generate_tree(const TreeGenConfig& cfg);

// JSON file format: {"root_id", "max_rows", "airways": [{"id", "parent",
// "children", "centerline": [[x,y,z], ...], "radius": [...]}]}. Units mm.
std::string tree_to_json(const AirwayTree& tree);
AirwayTree tree_from_json(const std::string& text);
void save_tree(const AirwayTree& tree, const std::filesystem::path& path);
AirwayTree load_tree(const std::filesystem::path& path);

/// FNV-1a hash of the canonical serialization, as a 16-digit hex string.
std::string tree_hash(const AirwayTree& tree);

TreeGenConfig tree_gen_config_from_json(const std::string& text);

}  // namespace bronchonav
