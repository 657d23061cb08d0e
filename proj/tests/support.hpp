#pragma once

#include "bronchonav/skeleton.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace testing {

using bronchonav::Airway;
using bronchonav::AirwayId;
using bronchonav::AirwayTree;

inline Airway make_airway(AirwayId id, std::optional<AirwayId> parent, std::vector<AirwayId> children,
                          std::vector<Eigen::Vector3d> centerline, double radius) {
  Airway a;
  a.id = id;
  a.parent = parent;
  a.children = std::move(children);
  a.radius.assign(centerline.size(), radius);
  a.centerline = std::move(centerline);
  return a;
}

// Trachea along +z from the origin.
inline AirwayTree straight_tree(double length, double radius = 9.0) {
  return AirwayTree({make_airway(0, std::nullopt, {}, {{0, 0, 0}, {0, 0, length}}, radius)}, 0);
}

// Trachea of `trachea` mm, then two main bronchi in the x-z plane at +-angle.
inline AirwayTree y_tree(double trachea = 60.0, double child = 30.0, double angle = 0.6) {
  const Eigen::Vector3d carina(0, 0, trachea);
  const Eigen::Vector3d left(-std::sin(angle), 0, std::cos(angle));
  const Eigen::Vector3d right(std::sin(angle), 0, std::cos(angle));
  return AirwayTree({make_airway(0, std::nullopt, {1, 2}, {{0, 0, 0}, carina}, 9.0),
                     make_airway(1, 0, {}, {carina, carina + child * left}, 6.0),
                     make_airway(2, 0, {}, {carina, carina + child * right}, 6.0)},
                    0);
}

}  // namespace testing
