#include "bronchonav/skeleton.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>
#include <random>
#include <sstream>

namespace bronchonav {

namespace {

constexpr double kBifurcationTolerance = 1e-9;  // mm

std::string airway_label(AirwayId id) { return "airway " + std::to_string(id); }

struct SegmentFoot {
  Eigen::Vector3d point;
  double t = 0.0;
  double distance = 0.0;
};

SegmentFoot closest_on_segment(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                               const Eigen::Vector3d& q) {
  const Eigen::Vector3d ab = b - a;
  const double denom = ab.squaredNorm();
  double t = denom > 0.0 ? (q - a).dot(ab) / denom : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  SegmentFoot foot;
  foot.point = a + t * ab;
  foot.t = t;
  foot.distance = (q - foot.point).norm();
  return foot;
}

// Any unit vector perpendicular to d.
Eigen::Vector3d any_perpendicular(const Eigen::Vector3d& d) {
  const Eigen::Vector3d axis = std::abs(d.x()) < 0.9 ? Eigen::Vector3d::UnitX()
                                                     : Eigen::Vector3d::UnitY();
  return d.cross(axis).normalized();
}

}  // namespace

bool Airway::operator==(const Airway& other) const {
  return id == other.id && parent == other.parent && children == other.children &&
         centerline == other.centerline && radius == other.radius;
}

AirwayTree::AirwayTree(std::vector<Airway> airways, AirwayId root_id, int max_rows)
    : airways_(std::move(airways)), root_id_(root_id), max_rows_(max_rows) {
  std::sort(airways_.begin(), airways_.end(),
            [](const Airway& a, const Airway& b) { return a.id < b.id; });
  validate();
  build_caches();
}

void AirwayTree::validate() const {
  const int n = size();
  if (n == 0) throw Error("tree has no airways");
  for (int k = 1; k < n; ++k) {
    if (airways_[k].id == airways_[k - 1].id) {
      throw Error("duplicate airway id " + std::to_string(airways_[k].id));
    }
  }
  for (int k = 0; k < n; ++k) {
    if (airways_[k].id != k) {
      throw Error("airway ids must be dense in [0, " + std::to_string(n) + "); found id " +
                  std::to_string(airways_[k].id));
    }
  }
  if (max_rows_ < n) {
    throw Error("tree has " + std::to_string(n) + " airways but max_rows is " +
                std::to_string(max_rows_));
  }
  if (!contains(root_id_)) throw Error("root_id " + std::to_string(root_id_) + " not found");
  if (airways_[root_id_].parent) throw Error("root " + airway_label(root_id_) + " has a parent");

  for (const Airway& a : airways_) {
    const std::string label = airway_label(a.id);
    if (a.centerline.size() < 2) throw Error(label + ": centerline needs at least 2 points");
    if (a.radius.size() != a.centerline.size()) {
      throw Error(label + ": radius count does not match centerline point count");
    }
    for (std::size_t k = 0; k < a.centerline.size(); ++k) {
      if (!a.centerline[k].allFinite()) throw Error(label + ": non-finite centerline point");
      if (!(a.radius[k] > 0.0) || !std::isfinite(a.radius[k])) {
        throw Error(label + ": radius must be strictly positive");
      }
      if (k > 0 && a.centerline[k] == a.centerline[k - 1]) {
        throw Error(label + ": consecutive centerline points " + std::to_string(k - 1) + " and " +
                    std::to_string(k) + " coincide");
      }
    }
    if (a.id != root_id_ && !a.parent) throw Error(label + ": only the root may lack a parent");
    if (a.parent && !contains(*a.parent)) {
      throw Error(label + ": unknown parent " + std::to_string(*a.parent));
    }
  }

  for (const Airway& a : airways_) {
    const std::string label = airway_label(a.id);
    std::vector<AirwayId> seen;
    for (AirwayId c : a.children) {
      if (!contains(c)) throw Error(label + ": unknown child " + std::to_string(c));
      if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
        throw Error(label + ": child " + std::to_string(c) + " listed twice");
      }
      seen.push_back(c);
      // Walk ancestors of `a`; finding `c` there means a cycle.
      AirwayId cur = a.id;
      for (int steps = 0; steps <= size(); ++steps) {
        if (cur == c) {
          throw Error("cycle: " + label + " lists its ancestor " + std::to_string(c) +
                      " as a child");
        }
        const auto& p = airways_[cur].parent;
        if (!p) break;
        cur = *p;
      }
      if (airways_[c].parent != a.id) {
        throw Error(airway_label(c) + ": parent field does not match " + label +
                    " listing it as a child");
      }
      if ((airways_[c].proximal() - a.distal()).norm() > kBifurcationTolerance) {
        throw Error(airway_label(c) + ": first centerline point does not match the distal point of " +
                    label);
      }
    }
    if (a.parent) {
      const auto& siblings = airways_[*a.parent].children;
      if (std::find(siblings.begin(), siblings.end(), a.id) == siblings.end()) {
        throw Error(label + ": parent " + std::to_string(*a.parent) + " does not list it as a child");
      }
    }
  }

  std::vector<char> reached(n, 0);
  std::queue<AirwayId> frontier;
  frontier.push(root_id_);
  reached[root_id_] = 1;
  int count = 1;
  while (!frontier.empty()) {
    const AirwayId cur = frontier.front();
    frontier.pop();
    for (AirwayId c : airways_[cur].children) {
      if (reached[c]) throw Error("cycle: " + airway_label(c) + " reached twice from the root");
      reached[c] = 1;
      ++count;
      frontier.push(c);
    }
  }
  if (count != n) {
    for (int k = 0; k < n; ++k) {
      if (!reached[k]) throw Error(airway_label(k) + " is not reachable from the root");
    }
  }
}

void AirwayTree::build_caches() {
  const int n = size();
  generation_.assign(n, 0);
  length_.assign(n, 0.0);
  z_bif_.assign(n, 0.0);
  samples_.assign(n, {});
  bound_center_.assign(n, Eigen::Vector3d::Zero());
  bound_radius_.assign(n, 0.0);
  bifurcations_.clear();

  for (const Airway& a : airways_) {
    double len = 0.0;
    for (std::size_t k = 1; k < a.centerline.size(); ++k) {
      len += (a.centerline[k] - a.centerline[k - 1]).norm();
    }
    length_[a.id] = len;
    if (a.children.size() >= 2) bifurcations_.push_back(a.id);

    auto& out = samples_[a.id];
    double arc = 0.0;
    for (std::size_t k = 0; k + 1 < a.centerline.size(); ++k) {
      const Eigen::Vector3d& p0 = a.centerline[k];
      const Eigen::Vector3d delta = a.centerline[k + 1] - p0;
      const double seg = delta.norm();
      const Eigen::Vector3d tangent = delta / seg;
      const int pieces = std::max(1, static_cast<int>(std::ceil(seg / kSampleSpacing)));
      // An interior vertex belongs to the segment ending there, so segment k > 0
      // skips its first point (already emitted with the previous tangent).
      for (int j = (k == 0 ? 0 : 1); j < pieces; ++j) {
        const double t = static_cast<double>(j) / pieces;
        out.push_back({p0 + t * delta, tangent, arc + t * seg});
      }
      arc += seg;
      out.push_back({a.centerline[k + 1], tangent, arc});
    }

    Eigen::Vector3d lo = a.centerline.front();
    Eigen::Vector3d hi = lo;
    for (const auto& p : a.centerline) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    bound_center_[a.id] = 0.5 * (lo + hi);
    double r = 0.0;
    for (const auto& p : a.centerline) r = std::max(r, (p - bound_center_[a.id]).norm());
    bound_radius_[a.id] = r;
  }

  // Root-first traversal for generation and cumulative insertion length.
  std::queue<AirwayId> frontier;
  frontier.push(root_id_);
  z_bif_[root_id_] = length_[root_id_];
  while (!frontier.empty()) {
    const AirwayId cur = frontier.front();
    frontier.pop();
    for (AirwayId c : airways_[cur].children) {
      generation_[c] = generation_[cur] + 1;
      z_bif_[c] = z_bif_[cur] + length_[c];
      frontier.push(c);
    }
  }
}

const Airway& AirwayTree::airway(AirwayId id) const {
  if (!contains(id)) throw Error("unknown airway id " + std::to_string(id));
  return airways_[id];
}

int AirwayTree::generation(AirwayId id) const {
  airway(id);
  return generation_[id];
}

double AirwayTree::length(AirwayId id) const {
  airway(id);
  return length_[id];
}

double AirwayTree::z_bif(AirwayId id) const {
  airway(id);
  return z_bif_[id];
}

Eigen::Vector3d AirwayTree::distal_direction(AirwayId id) const {
  const auto& c = airway(id).centerline;
  return (c[c.size() - 1] - c[c.size() - 2]).normalized();
}

Eigen::Vector3d AirwayTree::proximal_direction(AirwayId id) const {
  const auto& c = airway(id).centerline;
  return (c[1] - c[0]).normalized();
}

const std::vector<CenterlineSample>& AirwayTree::samples(AirwayId id) const {
  airway(id);
  return samples_[id];
}

const Eigen::Vector3d& AirwayTree::bound_center(AirwayId id) const {
  airway(id);
  return bound_center_[id];
}

double AirwayTree::bound_radius(AirwayId id) const {
  airway(id);
  return bound_radius_[id];
}

std::vector<AirwayId> AirwayTree::path_from_root(AirwayId id) const {
  std::vector<AirwayId> path{airway(id).id};
  while (airways_[path.back()].parent) path.push_back(*airways_[path.back()].parent);
  std::reverse(path.begin(), path.end());
  return path;
}

LumenFoot AirwayTree::nearest_centerline(const Eigen::Vector3d& q) const {
  LumenFoot best;
  best.distance = std::numeric_limits<double>::infinity();
  for (const Airway& a : airways_) {
    for (std::size_t k = 0; k + 1 < a.centerline.size(); ++k) {
      const SegmentFoot f = closest_on_segment(a.centerline[k], a.centerline[k + 1], q);
      if (f.distance < best.distance) {
        best.airway = a.id;
        best.point = f.point;
        best.distance = f.distance;
        best.radius = (1.0 - f.t) * a.radius[k] + f.t * a.radius[k + 1];
      }
    }
  }
  return best;
}

LumenFoot AirwayTree::nearest_lumen(const Eigen::Vector3d& q) const {
  LumenFoot best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const Airway& a : airways_) {
    for (std::size_t k = 0; k + 1 < a.centerline.size(); ++k) {
      const SegmentFoot f = closest_on_segment(a.centerline[k], a.centerline[k + 1], q);
      const double r = (1.0 - f.t) * a.radius[k] + f.t * a.radius[k + 1];
      const double gap = f.distance - r;
      if (gap < best_gap) {
        best_gap = gap;
        best.airway = a.id;
        best.point = f.point;
        best.distance = f.distance;
        best.radius = r;
      }
    }
  }
  return best;
}

bool AirwayTree::inside_lumen(const Eigen::Vector3d& q) const {
  const LumenFoot f = nearest_lumen(q);
  return f.distance <= f.radius;
}

bool AirwayTree::operator==(const AirwayTree& other) const {
  return root_id_ == other.root_id_ && max_rows_ == other.max_rows_ && airways_ == other.airways_;
}

int generation_distance(const AirwayTree& tree, AirwayId i, AirwayId j) {
  tree.airway(i);
  tree.airway(j);
  int gi = tree.generation(i);
  int gj = tree.generation(j);
  int hops = 0;
  while (gi > gj) {
    i = *tree.airway(i).parent;
    --gi;
    ++hops;
  }
  while (gj > gi) {
    j = *tree.airway(j).parent;
    --gj;
    ++hops;
  }
  while (i != j) {
    i = *tree.airway(i).parent;
    j = *tree.airway(j).parent;
    hops += 2;
  }
  return hops;
}

double insertion_length_to_bifurcation(const AirwayTree& tree, AirwayId i) { return tree.z_bif(i); }

void TreeGenConfig::validate() const {
  if (depth < 1) throw Error("tree config: depth must be >= 1");
  if (!(branch_angle_min > 0.0) || !(branch_angle_max > branch_angle_min) ||
      branch_angle_max >= std::numbers::pi / 2) {
    throw Error("tree config: branch_angle_range must satisfy 0 < min < max < pi/2");
  }
  if (min_sibling_angle < 0.0 || min_sibling_angle >= 2.0 * branch_angle_max) {
    throw Error("tree config: min_sibling_angle must lie in [0, 2 * branch_angle_max)");
  }
  if (!(length_min > 0.0) || !(length_max > length_min)) {
    throw Error("tree config: length_range must satisfy 0 < min < max");
  }
  if (!(trachea_length > 0.0) || !(trachea_radius > 0.0)) {
    throw Error("tree config: trachea length and radius must be positive");
  }
  if (!(radius_decay > 0.0) || radius_decay > 1.0) {
    throw Error("tree config: radius_decay must lie in (0, 1]");
  }
  if (max_airways < 0) throw Error("tree config: max_airways must be >= 0");
  if (max_rows < 1) throw Error("tree config: max_rows must be >= 1");
}

AirwayTree generate_tree(const TreeGenConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  struct Pending {
    AirwayId id;
    double plane_angle;
  };

  std::vector<Airway> airways;
  Airway root;
  root.id = 0;
  root.centerline = {Eigen::Vector3d::Zero(), Eigen::Vector3d(0.0, 0.0, cfg.trachea_length)};
  root.radius = {cfg.trachea_radius, cfg.trachea_radius};
  airways.push_back(root);

  const int cap = cfg.max_airways > 0 ? cfg.max_airways : std::numeric_limits<int>::max();
  std::vector<int> generation{0};
  std::queue<Pending> frontier;
  frontier.push({0, uniform(0.0, std::numbers::pi)});

  while (!frontier.empty()) {
    const Pending cur = frontier.front();
    frontier.pop();
    if (generation[cur.id] + 1 >= cfg.depth) continue;
    if (static_cast<int>(airways.size()) + 2 > cap) continue;

    const Eigen::Vector3d base = airways[cur.id].distal();
    const Eigen::Vector3d axis =
        (airways[cur.id].centerline.back() - airways[cur.id].centerline.front()).normalized();
    const Eigen::Vector3d u = any_perpendicular(axis);
    const Eigen::Vector3d v = axis.cross(u);
    const Eigen::Vector3d normal = std::cos(cur.plane_angle) * u + std::sin(cur.plane_angle) * v;

    double theta1 = 0.0;
    double theta2 = 0.0;
    do {
      theta1 = uniform(cfg.branch_angle_min, cfg.branch_angle_max);
      theta2 = uniform(cfg.branch_angle_min, cfg.branch_angle_max);
    } while (theta1 + theta2 < cfg.min_sibling_angle);

    const int gen = generation[cur.id] + 1;
    const double radius = cfg.trachea_radius * std::pow(cfg.radius_decay, gen);
    const Eigen::Vector3d dirs[2] = {std::cos(theta1) * axis + std::sin(theta1) * normal,
                                     std::cos(theta2) * axis - std::sin(theta2) * normal};
    for (const Eigen::Vector3d& d : dirs) {
      Airway child;
      child.id = static_cast<AirwayId>(airways.size());
      child.parent = cur.id;
      const double len = uniform(cfg.length_min, cfg.length_max);
      child.centerline = {base, base + len * d.normalized()};
      child.radius = {radius, radius};
      airways[cur.id].children.push_back(child.id);
      generation.push_back(gen);
      const double plane = cur.plane_angle + std::numbers::pi / 2 + uniform(-0.35, 0.35);
      frontier.push({child.id, plane});
      airways.push_back(std::move(child));
    }
  }
  return AirwayTree(std::move(airways), 0, cfg.max_rows);
}

// ---------------------------------------------------------------------------
// Serialization

std::string tree_to_json(const AirwayTree& tree) {
  nlohmann::ordered_json doc;
  doc["root_id"] = tree.root_id();
  doc["max_rows"] = tree.max_rows();
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const Airway& a : tree.airways()) {
    nlohmann::ordered_json item;
    item["id"] = a.id;
    item["parent"] = a.parent ? nlohmann::ordered_json(*a.parent) : nlohmann::ordered_json(nullptr);
    item["children"] = a.children;
    nlohmann::ordered_json pts = nlohmann::ordered_json::array();
    for (const auto& p : a.centerline) pts.push_back({p.x(), p.y(), p.z()});
    item["centerline"] = std::move(pts);
    item["radius"] = a.radius;
    list.push_back(std::move(item));
  }
  doc["airways"] = std::move(list);
  return doc.dump(1);
}

namespace {

const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw Error(where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(where + ": missing field \"" + key + "\"");
  return *it;
}

int as_int(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number_integer()) throw Error(where + ": expected an integer");
  return v.get<int>();
}

double as_number(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) throw Error(where + ": expected a number");
  return v.get<double>();
}

}  // namespace

AirwayTree tree_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("tree file: ") + e.what());
  }
  const AirwayId root_id = as_int(require(doc, "root_id", "tree"), "tree.root_id");
  const int max_rows = as_int(require(doc, "max_rows", "tree"), "tree.max_rows");
  const auto& list = require(doc, "airways", "tree");
  if (!list.is_array()) throw Error("tree.airways: expected an array");

  std::vector<Airway> airways;
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::string where = "tree.airways[" + std::to_string(k) + "]";
    const auto& item = list[k];
    Airway a;
    a.id = as_int(require(item, "id", where), where + ".id");
    const auto& parent = require(item, "parent", where);
    if (!parent.is_null()) a.parent = as_int(parent, where + ".parent");
    const auto& children = require(item, "children", where);
    if (!children.is_array()) throw Error(where + ".children: expected an array");
    for (std::size_t c = 0; c < children.size(); ++c) {
      a.children.push_back(as_int(children[c], where + ".children[" + std::to_string(c) + "]"));
    }
    const auto& pts = require(item, "centerline", where);
    if (!pts.is_array()) throw Error(where + ".centerline: expected an array");
    for (std::size_t p = 0; p < pts.size(); ++p) {
      const std::string pw = where + ".centerline[" + std::to_string(p) + "]";
      if (!pts[p].is_array() || pts[p].size() != 3) throw Error(pw + ": expected [x, y, z]");
      a.centerline.emplace_back(as_number(pts[p][0], pw), as_number(pts[p][1], pw),
                                as_number(pts[p][2], pw));
    }
    const auto& radius = require(item, "radius", where);
    if (!radius.is_array()) throw Error(where + ".radius: expected an array");
    for (std::size_t r = 0; r < radius.size(); ++r) {
      a.radius.push_back(as_number(radius[r], where + ".radius[" + std::to_string(r) + "]"));
    }
    airways.push_back(std::move(a));
  }
  return AirwayTree(std::move(airways), root_id, max_rows);
}

void save_tree(const AirwayTree& tree, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << tree_to_json(tree) << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

AirwayTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return tree_from_json(buf.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string tree_hash(const AirwayTree& tree) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tree_to_json(tree)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TreeGenConfig tree_gen_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("tree config: ") + e.what());
  }
  if (!doc.is_object()) throw Error("tree config: expected an object");
  TreeGenConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    const std::string where = "tree config." + key;
    auto range = [&](double& lo, double& hi) {
      if (!value.is_array() || value.size() != 2) throw Error(where + ": expected [min, max]");
      lo = as_number(value[0], where);
      hi = as_number(value[1], where);
    };
    if (key == "depth") cfg.depth = as_int(value, where);
    else if (key == "branch_angle_range") range(cfg.branch_angle_min, cfg.branch_angle_max);
    else if (key == "min_sibling_angle") cfg.min_sibling_angle = as_number(value, where);
    else if (key == "length_range") range(cfg.length_min, cfg.length_max);
    else if (key == "trachea_length") cfg.trachea_length = as_number(value, where);
    else if (key == "trachea_radius") cfg.trachea_radius = as_number(value, where);
    else if (key == "radius_decay") cfg.radius_decay = as_number(value, where);
    else if (key == "max_airways") cfg.max_airways = as_int(value, where);
    else if (key == "max_rows") cfg.max_rows = as_int(value, where);
    else if (key == "seed") {
      if (!value.is_number_unsigned() && !value.is_number_integer()) throw Error(where + ": expected an integer");
      cfg.seed = value.get<std::uint64_t>();
    } else {
      throw Error("tree config: unknown field \"" + key + "\"");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace bronchonav
