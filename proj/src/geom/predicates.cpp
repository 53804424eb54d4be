#include "i2m/geom/predicates.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "i2m/common/error.hpp"

namespace i2m {

namespace {

// ---------------------------------------------------------------------------
// Floating-point expansion arithmetic (Priest / Shewchuk). An expansion is a
// sum of non-overlapping doubles stored in increasing magnitude; its sign is
// the sign of the last (largest) component.
// ---------------------------------------------------------------------------

constexpr double kEpsilon = 0x1p-53;
constexpr double kSplitter = 134217729.0;  // 2^27 + 1

// Shewchuk's static bounds, doubled as headroom for our evaluation order.
constexpr double kOrientBound = 2.0 * (7.0 + 56.0 * kEpsilon) * kEpsilon;
constexpr double kInsphereBound = 2.0 * (16.0 + 224.0 * kEpsilon) * kEpsilon;

using Expansion = std::vector<double>;

inline void two_sum(double a, double b, double& x, double& y) {
  x = a + b;
  double bv = x - a;
  double av = x - bv;
  double br = b - bv;
  double ar = a - av;
  y = ar + br;
}

inline void fast_two_sum(double a, double b, double& x, double& y) {
  x = a + b;
  double bv = x - a;
  y = b - bv;
}

inline void two_diff(double a, double b, double& x, double& y) {
  x = a - b;
  double bv = a - x;
  double av = x + bv;
  double br = bv - b;
  double ar = a - av;
  y = ar + br;
}

inline void split(double a, double& hi, double& lo) {
  double c = kSplitter * a;
  double abig = c - a;
  hi = c - abig;
  lo = a - hi;
}

inline void two_product(double a, double b, double& x, double& y) {
  x = a * b;
  double ahi, alo, bhi, blo;
  split(a, ahi, alo);
  split(b, bhi, blo);
  double err1 = x - (ahi * bhi);
  double err2 = err1 - (alo * bhi);
  double err3 = err2 - (ahi * blo);
  y = (alo * blo) - err3;
}

Expansion exact_diff(double a, double b) {
  double x, y;
  two_diff(a, b, x, y);
  Expansion e;
  if (y != 0.0) e.push_back(y);
  e.push_back(x);
  return e;
}

Expansion grow(const Expansion& e, double b) {
  Expansion h;
  h.reserve(e.size() + 1);
  double q = b;
  for (double ei : e) {
    double qn, hh;
    two_sum(q, ei, qn, hh);
    q = qn;
    if (hh != 0.0) h.push_back(hh);
  }
  if (q != 0.0 || h.empty()) h.push_back(q);
  return h;
}

Expansion add(const Expansion& e, const Expansion& f) {
  Expansion h = e;
  for (double fi : f) h = grow(h, fi);
  return h;
}

Expansion negate(Expansion e) {
  for (double& x : e) x = -x;
  return e;
}

Expansion sub(const Expansion& e, const Expansion& f) { return add(e, negate(f)); }

Expansion scale(const Expansion& e, double b) {
  Expansion h;
  h.reserve(2 * e.size());
  double q, hh;
  two_product(e[0], b, q, hh);
  if (hh != 0.0) h.push_back(hh);
  for (std::size_t i = 1; i < e.size(); ++i) {
    double p1, p0, sum;
    two_product(e[i], b, p1, p0);
    two_sum(q, p0, sum, hh);
    if (hh != 0.0) h.push_back(hh);
    fast_two_sum(p1, sum, q, hh);
    if (hh != 0.0) h.push_back(hh);
  }
  if (q != 0.0 || h.empty()) h.push_back(q);
  return h;
}

Expansion mul(const Expansion& e, const Expansion& f) {
  Expansion acc{0.0};
  for (double fi : f) acc = add(acc, scale(e, fi));
  return acc;
}

int sign_of(const Expansion& e) {
  double top = e.back();
  return (top > 0.0) - (top < 0.0);
}

// 3x3 determinant of expansion entries by cofactor expansion along row 0.
Expansion det3(const std::array<std::array<Expansion, 3>, 3>& m) {
  Expansion c0 = sub(mul(m[1][1], m[2][2]), mul(m[1][2], m[2][1]));
  Expansion c1 = sub(mul(m[1][0], m[2][2]), mul(m[1][2], m[2][0]));
  Expansion c2 = sub(mul(m[1][0], m[2][1]), mul(m[1][1], m[2][0]));
  return add(sub(mul(m[0][0], c0), mul(m[0][1], c1)), mul(m[0][2], c2));
}

void require_finite(const Point3& p) {
  if (!is_finite(p)) throw GeometryError("geometric predicate called with a non-finite coordinate");
}

}  // namespace

namespace detail {

int orient3d_exact_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  std::array<std::array<Expansion, 3>, 3> m{{
      {exact_diff(b.x, a.x), exact_diff(b.y, a.y), exact_diff(b.z, a.z)},
      {exact_diff(c.x, a.x), exact_diff(c.y, a.y), exact_diff(c.z, a.z)},
      {exact_diff(d.x, a.x), exact_diff(d.y, a.y), exact_diff(d.z, a.z)},
  }};
  return sign_of(det3(m));
}

int orient3d_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  const double bax = b.x - a.x, bay = b.y - a.y, baz = b.z - a.z;
  const double cax = c.x - a.x, cay = c.y - a.y, caz = c.z - a.z;
  const double dax = d.x - a.x, day = d.y - a.y, daz = d.z - a.z;

  const double m0 = cay * daz, m1 = caz * day;
  const double m2 = cax * daz, m3 = caz * dax;
  const double m4 = cax * day, m5 = cay * dax;
  const double det = bax * (m0 - m1) - bay * (m2 - m3) + baz * (m4 - m5);
  const double permanent = std::fabs(bax) * (std::fabs(m0) + std::fabs(m1)) +
                           std::fabs(bay) * (std::fabs(m2) + std::fabs(m3)) +
                           std::fabs(baz) * (std::fabs(m4) + std::fabs(m5));
  const double bound = kOrientBound * permanent;
  if (det > bound) return 1;
  if (-det > bound) return -1;
  return orient3d_exact_sign(a, b, c, d);
}

// Lifted 4x4 determinant with rows (p - e, |p - e|^2) for p in a, b, c, d.
// Its sign is negative when e is inside the sphere of a positive tetrahedron;
// callers negate.
int insphere_exact_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e) {
  const std::array<const Point3*, 4> pts{&a, &b, &c, &d};
  std::array<std::array<Expansion, 3>, 4> t;
  std::array<Expansion, 4> lift;
  for (int i = 0; i < 4; ++i) {
    t[i][0] = exact_diff(pts[i]->x, e.x);
    t[i][1] = exact_diff(pts[i]->y, e.y);
    t[i][2] = exact_diff(pts[i]->z, e.z);
    lift[i] = add(add(mul(t[i][0], t[i][0]), mul(t[i][1], t[i][1])), mul(t[i][2], t[i][2]));
  }
  // Cofactor expansion along the lift column.
  Expansion det{0.0};
  for (int skip = 0; skip < 4; ++skip) {
    std::array<std::array<Expansion, 3>, 3> m;
    int r = 0;
    for (int i = 0; i < 4; ++i) {
      if (i == skip) continue;
      m[r++] = t[i];
    }
    Expansion term = mul(lift[skip], det3(m));
    // Sign of cofactor (row skip, column 3) in a 4x4: (-1)^(skip + 3).
    det = ((skip + 3) % 2 == 0) ? add(det, term) : sub(det, term);
  }
  return -sign_of(det);
}

int insphere_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e) {
  const double aex = a.x - e.x, aey = a.y - e.y, aez = a.z - e.z;
  const double bex = b.x - e.x, bey = b.y - e.y, bez = b.z - e.z;
  const double cex = c.x - e.x, cey = c.y - e.y, cez = c.z - e.z;
  const double dex = d.x - e.x, dey = d.y - e.y, dez = d.z - e.z;

  const double aexbey = aex * bey, bexaey = bex * aey;
  const double bexcey = bex * cey, cexbey = cex * bey;
  const double cexdey = cex * dey, dexcey = dex * cey;
  const double dexaey = dex * aey, aexdey = aex * dey;
  const double aexcey = aex * cey, cexaey = cex * aey;
  const double bexdey = bex * dey, dexbey = dex * bey;
  const double ab = aexbey - bexaey;
  const double bc = bexcey - cexbey;
  const double cd = cexdey - dexcey;
  const double da = dexaey - aexdey;
  const double ac = aexcey - cexaey;
  const double bd = bexdey - dexbey;

  const double abc = aez * bc - bez * ac + cez * ab;
  const double bcd = bez * cd - cez * bd + dez * bc;
  const double cda = cez * da + dez * ac + aez * cd;
  const double dab = dez * ab + aez * bd + bez * da;

  const double alift = aex * aex + aey * aey + aez * aez;
  const double blift = bex * bex + bey * bey + bez * bez;
  const double clift = cex * cex + cey * cey + cez * cez;
  const double dlift = dex * dex + dey * dey + dez * dez;

  const double det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd);

  const double pab = std::fabs(aexbey) + std::fabs(bexaey);
  const double pbc = std::fabs(bexcey) + std::fabs(cexbey);
  const double pcd = std::fabs(cexdey) + std::fabs(dexcey);
  const double pda = std::fabs(dexaey) + std::fabs(aexdey);
  const double pac = std::fabs(aexcey) + std::fabs(cexaey);
  const double pbd = std::fabs(bexdey) + std::fabs(dexbey);
  const double pabc = std::fabs(aez) * pbc + std::fabs(bez) * pac + std::fabs(cez) * pab;
  const double pbcd = std::fabs(bez) * pcd + std::fabs(cez) * pbd + std::fabs(dez) * pbc;
  const double pcda = std::fabs(cez) * pda + std::fabs(dez) * pac + std::fabs(aez) * pcd;
  const double pdab = std::fabs(dez) * pab + std::fabs(aez) * pbd + std::fabs(bez) * pda;
  const double permanent = dlift * pabc + clift * pdab + blift * pcda + alift * pbcd;
  const double bound = kInsphereBound * permanent;
  // det here follows the "positive means inside for left-handed tets"
  // convention, so the sign flips for our right-handed orientation.
  if (det > bound) return -1;
  if (-det > bound) return 1;
  return insphere_exact_sign(a, b, c, d, e);
}

int insphere_perturbed_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d,
                            const Point3& e) {
  int s = insphere_sign(a, b, c, d, e);
  if (s != 0) return s;

  // Symbolic perturbation: lift each point by an infinitesimal that grows
  // with its lexicographic rank. The leading nonzero term of the perturbed
  // determinant is an orientation of four of the five points; two terms
  // always suffice when abcd is non-degenerate.
  std::array<const Point3*, 5> order{&a, &b, &c, &d, &e};
  std::sort(order.begin(), order.end(), [](const Point3* p, const Point3* q) { return lex_less(*p, *q); });
  for (int i = 4; i > 2; --i) {
    const Point3* top = order[i];
    if (top == &e) return -1;
    int o = 0;
    if (top == &d) {
      o = orient3d_sign(a, b, c, e);
    } else if (top == &c) {
      o = orient3d_sign(a, b, e, d);
    } else if (top == &b) {
      o = orient3d_sign(a, e, c, d);
    } else {
      o = orient3d_sign(e, b, c, d);
    }
    if (o != 0) return o;
  }
  return -1;
}

}  // namespace detail

Orientation orient3d(const Point3& a, const Point3& b, const Point3& c, const Point3& d) {
  require_finite(a);
  require_finite(b);
  require_finite(c);
  require_finite(d);
  return static_cast<Orientation>(detail::orient3d_sign(a, b, c, d));
}

namespace {
void require_positive_tet(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e) {
  require_finite(e);
  if (orient3d(a, b, c, d) != Orientation::Positive) {
    throw GeometryError("insphere requires a positively oriented, non-degenerate tetrahedron");
  }
}
}  // namespace

SphereSide insphere(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e) {
  require_positive_tet(a, b, c, d, e);
  return static_cast<SphereSide>(detail::insphere_sign(a, b, c, d, e));
}

SphereSide insphere_perturbed(const Point3& a, const Point3& b, const Point3& c, const Point3& d,
                              const Point3& e) {
  require_positive_tet(a, b, c, d, e);
  return static_cast<SphereSide>(detail::insphere_perturbed_sign(a, b, c, d, e));
}

}  // namespace i2m
