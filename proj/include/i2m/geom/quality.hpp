#pragma once

#include <array>

#include "i2m/geom/point.hpp"

namespace i2m {

/// Edge order used for dihedral angles: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3).
inline constexpr std::array<std::array<int, 2>, 6> kTetEdges{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

struct QualityVector {
  std::array<double, 6> dihedral_deg{};  // one per edge, kTetEdges order
  double radius_edge = 0.0;             // circumradius / shortest edge
  double circumradius = 0.0;
  Point3 circumcenter;
};

/// Full quality measures of a tetrahedron (either orientation).
/// Throws GeometryError for a degenerate (flat) tetrahedron.
QualityVector quality(const Point3& a, const Point3& b, const Point3& c, const Point3& d);

/// Circumcenter in floating point. Result is non-finite for flat input.
Point3 circumcenter(const Point3& a, const Point3& b, const Point3& c, const Point3& d);

/// Circumcenter of a triangle, in its plane.
Point3 triangle_circumcenter(const Point3& a, const Point3& b, const Point3& c);

/// The subset of quality measures the refinement loop needs.
struct SizeMeasure {
  Point3 center;
  double radius = 0.0;
  double shortest_edge = 0.0;
};

SizeMeasure size_measure(const Point3& a, const Point3& b, const Point3& c, const Point3& d);

inline Point3 barycenter(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  return {(a.x + b.x + c.x + d.x) * 0.25, (a.y + b.y + c.y + d.y) * 0.25, (a.z + b.z + c.z + d.z) * 0.25};
}

}  // namespace i2m
