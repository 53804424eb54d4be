#pragma once

#include "i2m/geom/point.hpp"

namespace i2m {

enum class Orientation { Negative = -1, Degenerate = 0, Positive = 1 };

enum class SphereSide { Outside = -1, Cospherical = 0, Inside = 1 };

/// Sign of det[b-a, c-a, d-a]. Positive for the right-handed corner
/// (0,0,0),(1,0,0),(0,1,0),(0,0,1). Exact: a floating-point filter falls
/// back to expansion arithmetic when the rounding bound is not conclusive.
/// Throws GeometryError on non-finite input.
Orientation orient3d(const Point3& a, const Point3& b, const Point3& c, const Point3& d);

/// Exact position of e relative to the circumsphere of the positively
/// oriented tetrahedron abcd. Throws GeometryError if abcd is not positive.
SphereSide insphere(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e);

/// insphere with cospherical ties broken by symbolic perturbation over the
/// lexicographic point order; never returns Cospherical for five distinct
/// points. Same preconditions as insphere.
SphereSide insphere_perturbed(const Point3& a, const Point3& b, const Point3& c, const Point3& d,
                              const Point3& e);

namespace detail {

// Unchecked variants for the refinement kernel (inputs already validated).
int orient3d_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d);
int insphere_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e);
int insphere_perturbed_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d,
                            const Point3& e);

// Exact-only evaluations (no filter); exposed so tests can exercise the
// expansion path directly.
int orient3d_exact_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d);
int insphere_exact_sign(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& e);

}  // namespace detail

}  // namespace i2m
