#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <vector>

#include "i2m/delaunay/delaunay.hpp"
#include "i2m/delaunay/kernel.hpp"
#include "i2m/image/labeled_image.hpp"

namespace i2m {

struct RefinementRule {
  double rho_bar = 2.0;  // radius-edge bound
  SizingPolicy sizing;
  /// Also refine tets whose barycenter is background (coarse background mesh).
  bool include_background = false;

  /// Throws UsageError unless rho_bar >= 2 and the sizing policy is valid.
  void validate(const LabeledImage& img) const;
};

/// Restricts refinement to part of a mesh. Empty masks mean "everything".
struct RefineScope {
  const LeafLocator* locator = nullptr;  // owner of new tets; null: leaf 0
  std::vector<char> refine_leaves;       // only tets owned here are tested for badness
  std::vector<char> writable_leaves;     // new tets must be owned here
};

/// Caps on a refinement loop. Zero disables a cap.
struct Watchdog {
  double time_limit_s = 0.0;
  std::uint64_t max_insertions = 0;
};

struct RefineStats {
  std::uint64_t insertions = 0;
  std::uint64_t initial_bad = 0;
  std::uint64_t deferred = 0;    // cavity needed tets absent from the submesh
  std::uint64_t duplicates = 0;  // insertion point hit an existing vertex
  std::uint64_t rejected = 0;    // cavity could not be committed in this scope
  std::uint64_t rollbacks = 0;
  double wall_seconds = 0.0;

  RefineStats& operator+=(const RefineStats& o);
};

/// Committed insertion points in commit order.
using CommitLog = std::vector<Point3>;

/// Decides whether a tet violates the rule and where to refine it.
class BadnessOracle {
 public:
  BadnessOracle(const LabeledImage& img, const RefinementRule& rule, const RefineScope& scope = {});

  /// Circumcenter of t if t is bad. It may lie outside the mesh bounds;
  /// refine_step then splits the boundary instead.
  std::optional<Point3> check(const TetMesh& m, TetId t) const;
  bool is_bad(const TetMesh& m, TetId t) const { return check(m, t).has_value(); }

 private:
  const LabeledImage* img_;
  RefinementRule rule_;
  std::vector<char> refine_leaves_;
};

struct WorkItem {
  TetId tet = 0;
  GlobalId gid = 0;
};

/// Bad tets of the mesh in ascending slot order: the initial FIFO queue.
std::vector<WorkItem> initial_work(const TetMesh& m, const BadnessOracle& oracle);

/// Starts the clock and checks the caps. Throws RefineTimeout.
class WatchdogClock {
 public:
  explicit WatchdogClock(const Watchdog& wd) : wd_(wd), start_(std::chrono::steady_clock::now()) {}
  void check(std::uint64_t insertions) const;
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  Watchdog wd_;
  std::chrono::steady_clock::time_point start_;
};

enum class StepResult { Stale, Committed, Duplicate, Rejected, Missing, Conflict };

/// Per-thread state for refine_step.
struct StepScratch {
  CavityScratch cavity_marks;
  kernel::CommitScratch commit;
  Cavity cavity;
  std::vector<TetId> created;
  Point3 point;
};

namespace detail {

inline StepResult from_walk(kernel::WalkStatus w) {
  switch (w) {
    case kernel::WalkStatus::Found:
      return StepResult::Committed;
    case kernel::WalkStatus::Missing:
      return StepResult::Missing;
    case kernel::WalkStatus::Conflict:
      return StepResult::Conflict;
    case kernel::WalkStatus::Lost:
      break;
  }
  return StepResult::Rejected;
}

// Axis (0..2) on which all three points sit on the same box face, or -1.
inline int face_axis(const Box& b, const Point3& u, const Point3& v, const Point3& w) {
  const double lo[3] = {b.lo.x, b.lo.y, b.lo.z}, hi[3] = {b.hi.x, b.hi.y, b.hi.z};
  const double pu[3] = {u.x, u.y, u.z}, pv[3] = {v.x, v.y, v.z}, pw[3] = {w.x, w.y, w.z};
  for (int a = 0; a < 3; ++a) {
    if (pu[a] == pv[a] && pu[a] == pw[a] && (pu[a] == lo[a] || pu[a] == hi[a])) return a;
  }
  return -1;
}

inline double& coord(Point3& p, int a) { return a == 0 ? p.x : (a == 1 ? p.y : p.z); }
inline double coord(const Point3& p, int a) { return a == 0 ? p.x : (a == 1 ? p.y : p.z); }

// Box-edge segment (u, v): both endpoints on the same two box faces.
// Returns the free axis, or -1.
inline int segment_axis(const Box& b, const Point3& u, const Point3& v) {
  int fixed = 0, free_axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double x = coord(u, a);
    if (x == coord(v, a) && (x == coord(b.lo, a) || x == coord(b.hi, a))) {
      ++fixed;
    } else {
      free_axis = a;
    }
  }
  return fixed == 2 ? free_axis : -1;
}

inline Point3 segment_midpoint(const Point3& u, const Point3& v, int free_axis) {
  Point3 mid = u;
  coord(mid, free_axis) = 0.5 * (coord(u, free_axis) + coord(v, free_axis));
  return mid;
}

// Kind of an insertion point: interior, on a box face, on a box edge.
enum class Feature { Interior, Facet, Segment };

/// Split point of hull facet `face` of tet `t`: the triangle circumcenter
/// snapped onto the face plane, or, when that falls off the box face, the
/// midpoint of the box-edge segment under its projection. `t` must be
/// claimed; `at` leaves as a claimed tet near the returned point.
template <class Claimer>
StepResult facet_split(const TetMesh& m, TetId t, int face, Claimer& claimer, TetId& at, Point3& out,
                       Feature& kind) {
  const Box& box = m.bounds();
  const Tet& ht = m.tet(t);
  std::array<Point3, 3> tri;
  for (int i = 0, n = 0; i < 4; ++i) {
    if (i != face) tri[n++] = m.point(ht.v[i]);
  }
  const int axis = face_axis(box, tri[0], tri[1], tri[2]);
  if (axis < 0) return StepResult::Rejected;
  Point3 q = triangle_circumcenter(tri[0], tri[1], tri[2]);
  if (!is_finite(q)) return StepResult::Rejected;
  coord(q, axis) = coord(tri[0], axis);
  at = t;
  if (box.contains(q)) {
    out = q;
    kind = Feature::Facet;
    return StepResult::Committed;
  }
  const Point3 q1 = box.clamp(q);
  int axis2 = -1;
  for (int a = 0; a < 3 && axis2 < 0; ++a) {
    if (a != axis && coord(q1, a) != coord(q, a)) axis2 = a;
  }
  if (auto r = from_walk(kernel::walk_to(m, t, q1, claimer, at)); r != StepResult::Committed) return r;
  auto on_segment = [&](TetId x) {
    const Tet& tt = m.tet(x);
    for (const auto& e : kTetEdges) {
      const Point3& u = m.point(tt.v[e[0]]);
      const Point3& v = m.point(tt.v[e[1]]);
      const int fa = segment_axis(box, u, v);
      if (fa < 0 || fa == axis || fa == axis2) continue;
      if (coord(u, axis) != coord(q1, axis) || coord(u, axis2) != coord(q1, axis2)) continue;
      const double z = coord(q1, fa);
      if (z < std::min(coord(u, fa), coord(v, fa)) || z > std::max(coord(u, fa), coord(v, fa))) continue;
      out = segment_midpoint(u, v, fa);
      return true;
    }
    return false;
  };
  if (auto r = from_walk(kernel::search_containing(m, at, q1, claimer, on_segment, at)); r != StepResult::Committed) {
    return r;
  }
  kind = Feature::Segment;
  return StepResult::Committed;
}

/// Split point for a bad tet whose circumcenter c lies outside the box: the
/// hull facet under the clamped circumcenter is split.
template <class Claimer>
StepResult boundary_point(const TetMesh& m, const Point3& c, Claimer& claimer, TetId& at, Point3& out,
                          Feature& kind) {
  const Point3 c1 = m.bounds().clamp(c);
  TetId t = at;
  if (auto r = from_walk(kernel::walk_to(m, at, c1, claimer, t)); r != StepResult::Committed) return r;
  int hull_face = -1;
  auto has_hull_facet = [&](TetId x) {
    const Tet& tt = m.tet(x);
    for (int f = 0; f < 4; ++f) {
      if (tt.n[f] == kBoundary && kernel::face_side(m, tt, f, c1) == 0) {
        hull_face = f;
        return true;
      }
    }
    return false;
  };
  if (auto r = from_walk(kernel::search_containing(m, t, c1, claimer, has_hull_facet, t));
      r != StepResult::Committed) {
    return r;
  }
  return facet_split(m, t, hull_face, claimer, at, out, kind);
}

/// Boundary feature in the cavity that p encroaches (lies strictly inside
/// its diametral ball). Segments are checked before facets; features of
/// the same or lower dimension than p's own are never reported.
template <class Claimer>
StepResult find_encroached(const TetMesh& m, const Cavity& cav, const Point3& p, Claimer& claimer, TetId& at,
                           Point3& out, Feature& kind, bool& found) {
  found = false;
  const Box& box = m.bounds();
  if (kind == Feature::Segment) return StepResult::Committed;
  for (TetId t : cav.tets) {
    const Tet& tt = m.tet(t);
    for (const auto& e : kTetEdges) {
      const Point3& u = m.point(tt.v[e[0]]);
      const Point3& v = m.point(tt.v[e[1]]);
      const int fa = segment_axis(box, u, v);
      if (fa < 0) continue;
      const Point3 mid = segment_midpoint(u, v, fa);
      if (distance2(p, mid) < 0.25 * distance2(u, v)) {
        out = mid;
        at = t;
        kind = Feature::Segment;
        found = true;
        return StepResult::Committed;
      }
    }
  }
  if (kind == Feature::Facet) return StepResult::Committed;
  for (const CavityFacet& fc : cav.boundary) {
    if (fc.outer != kBoundary) continue;
    const Tet& tt = m.tet(fc.inner);
    std::array<Point3, 3> tri;
    for (int i = 0, n = 0; i < 4; ++i) {
      if (i != fc.face) tri[n++] = m.point(tt.v[i]);
    }
    const Point3 q = triangle_circumcenter(tri[0], tri[1], tri[2]);
    if (!is_finite(q) || distance2(p, q) >= distance2(q, tri[0])) continue;
    found = true;
    return facet_split(m, fc.inner, fc.face, claimer, at, out, kind);
  }
  return StepResult::Committed;
}

/// One refinement attempt on a work item: claim and validate the tet, pick
/// the insertion point, grow its cavity, commit. Candidates that encroach a
/// boundary facet or box-edge segment are replaced by a split of that
/// feature. On Committed, s.created holds the new tets and s.point the
/// inserted point. Shared by the sequential loop and the speculative
/// threads, so both make identical moves.
template <class Claimer>
StepResult refine_step(TetMesh& m, const BadnessOracle& oracle, const WorkItem& item, Claimer& claimer,
                       const kernel::CommitParams& prm, StepScratch& s) {
  if (!claimer.claim(item.tet)) return StepResult::Conflict;
  const Tet& t = m.tet(item.tet);
  if (!t.alive || t.gid != item.gid) return StepResult::Stale;
  const auto cc = oracle.check(m, item.tet);
  if (!cc) return StepResult::Stale;
  if (!is_finite(*cc)) return StepResult::Rejected;

  TetId start = item.tet;
  Feature kind = Feature::Interior;
  if (m.bounds().contains(*cc)) {
    s.point = *cc;
  } else if (auto r = boundary_point(m, *cc, claimer, start, s.point, kind); r != StepResult::Committed) {
    return r;
  }
  const double tol2 = prm.duplicate_tolerance * prm.duplicate_tolerance;
  for (;;) {
    if (kernel::insphere_of(m, m.tet(start), s.point) <= 0) {
      if (auto r = from_walk(kernel::walk_to(m, start, s.point, claimer, start)); r != StepResult::Committed) {
        return r;
      }
      // A tet containing the point has it strictly inside its sphere
      // unless the point is one of its vertices.
      if (kernel::insphere_of(m, m.tet(start), s.point) <= 0) {
        for (VertexId v : m.tet(start).v) {
          if (distance2(m.point(v), s.point) <= tol2) return StepResult::Duplicate;
        }
        return StepResult::Rejected;
      }
    }
    switch (kernel::grow_cavity(m, s.point, start, claimer, s.cavity_marks, s.cavity)) {
      case CavityStatus::Ok:
        break;
      case CavityStatus::Missing:
        return StepResult::Missing;
      case CavityStatus::Conflict:
        return StepResult::Conflict;
    }
    bool found = false;
    if (auto r = find_encroached(m, s.cavity, s.point, claimer, start, s.point, kind, found);
        r != StepResult::Committed) {
      return r;
    }
    if (!found) break;
  }
  switch (kernel::commit_cavity(m, s.cavity, prm, claimer, s.commit, s.created)) {
    case kernel::CommitStatus::Committed:
      return StepResult::Committed;
    case kernel::CommitStatus::Duplicate:
      return StepResult::Duplicate;
    case kernel::CommitStatus::Rejected:
      break;
  }
  return StepResult::Rejected;
}

}  // namespace detail

/// Sequential FIFO Delaunay refinement until no in-scope tet is bad.
/// Throws RefineTimeout if a watchdog cap is hit.
RefineStats refine(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule,
                   const RefineScope& scope = {}, const Watchdog& watchdog = {}, CommitLog* log = nullptr);

/// Background-mesh size for an octree of the given depth: diagonal / 2^(depth+1).
double default_coarse_h(const Box& bounds, int depth);

/// Rule for the coarse background pass: every tet, background included, to
/// h_coarse. Throws UsageError unless rho_bar >= 2 and h_coarse > 0.
RefinementRule background_rule(double h_coarse, double rho_bar);

/// Coarse background pass (refine with background_rule). h_coarse may be
/// finer than the voxels.
RefineStats refine_background(TetMesh& mesh, const LabeledImage& img, double h_coarse, double rho_bar,
                              const RefineScope& scope = {}, const Watchdog& watchdog = {},
                              CommitLog* log = nullptr);

}  // namespace i2m
