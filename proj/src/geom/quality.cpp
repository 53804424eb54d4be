#include "i2m/geom/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "i2m/common/error.hpp"
#include "i2m/geom/predicates.hpp"

namespace i2m {

Point3 circumcenter(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  const Point3 ba = b - a;
  const Point3 ca = c - a;
  const Point3 da = d - a;
  const Point3 cxd = cross(ca, da);
  const Point3 dxb = cross(da, ba);
  const Point3 bxc = cross(ba, ca);
  const double denom = 2.0 * dot(ba, cxd);
  const Point3 num = norm2(ba) * cxd + norm2(ca) * dxb + norm2(da) * bxc;
  return a + num * (1.0 / denom);
}

Point3 triangle_circumcenter(const Point3& a, const Point3& b, const Point3& c) {
  const Point3 u = b - a;
  const Point3 v = c - a;
  const Point3 w = cross(u, v);
  const Point3 num = norm2(u) * cross(v, w) + norm2(v) * cross(w, u);
  return a + num * (1.0 / (2.0 * norm2(w)));
}

SizeMeasure size_measure(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  SizeMeasure m;
  m.center = circumcenter(a, b, c, d);
  m.radius = norm(m.center - a);
  const double e2 = std::min({distance2(a, b), distance2(a, c), distance2(a, d), distance2(b, c), distance2(b, d),
                              distance2(c, d)});
  m.shortest_edge = std::sqrt(e2);
  return m;
}

QualityVector quality(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  if (orient3d(a, b, c, d) == Orientation::Degenerate) {
    throw GeometryError("quality requested for a degenerate tetrahedron");
  }
  const std::array<Point3, 4> v{a, b, c, d};
  QualityVector q;
  for (std::size_t k = 0; k < kTetEdges.size(); ++k) {
    const int i = kTetEdges[k][0];
    const int j = kTetEdges[k][1];
    int others[2];
    int n = 0;
    for (int m = 0; m < 4; ++m) {
      if (m != i && m != j) others[n++] = m;
    }
    const Point3 e = v[j] - v[i];
    // Normals of the two faces through edge ij; the angle between them is the
    // angle between the half-planes since both are e x (something).
    const Point3 n1 = cross(e, v[others[0]] - v[i]);
    const Point3 n2 = cross(e, v[others[1]] - v[i]);
    const double ang = std::atan2(norm(cross(n1, n2)), dot(n1, n2));
    q.dihedral_deg[k] = ang * 180.0 / std::numbers::pi;
  }
  const SizeMeasure s = size_measure(a, b, c, d);
  q.circumcenter = s.center;
  q.circumradius = s.radius;
  q.radius_edge = s.radius / s.shortest_edge;
  return q;
}

}  // namespace i2m
