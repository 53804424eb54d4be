#include "i2m/delaunay/refine.hpp"

#include <cmath>
#include <deque>
#include <string>

#include "i2m/common/error.hpp"
#include "i2m/geom/quality.hpp"

namespace i2m {

void RefinementRule::validate(const LabeledImage& img) const {
  if (!(rho_bar >= 2.0)) throw UsageError("radius-edge bound must be >= 2, got " + std::to_string(rho_bar));
  sizing.validate(img);
}

RefineStats& RefineStats::operator+=(const RefineStats& o) {
  insertions += o.insertions;
  initial_bad += o.initial_bad;
  deferred += o.deferred;
  duplicates += o.duplicates;
  rejected += o.rejected;
  rollbacks += o.rollbacks;
  wall_seconds += o.wall_seconds;
  return *this;
}

BadnessOracle::BadnessOracle(const LabeledImage& img, const RefinementRule& rule, const RefineScope& scope)
    : img_(&img), rule_(rule), refine_leaves_(scope.refine_leaves) {}

std::optional<Point3> BadnessOracle::check(const TetMesh& m, TetId t) const {
  const Tet& x = m.tet(t);
  if (!x.alive) return std::nullopt;
  const auto& rl = refine_leaves_;
  if (!rl.empty() && (x.owner < 0 || static_cast<std::size_t>(x.owner) >= rl.size() || !rl[x.owner])) {
    return std::nullopt;
  }
  const Point3& a = m.point(x.v[0]);
  const Point3& b = m.point(x.v[1]);
  const Point3& c = m.point(x.v[2]);
  const Point3& d = m.point(x.v[3]);
  const Label label = classify(*img_, barycenter(a, b, c, d));
  double h = rule_.sizing.h;
  if (label == kBackground) {
    if (!rule_.include_background) return std::nullopt;
  } else {
    h = rule_.sizing.size_for(label);
  }
  const SizeMeasure s = size_measure(a, b, c, d);
  if (s.radius > h || s.radius > rule_.rho_bar * s.shortest_edge) return s.center;
  return std::nullopt;
}

std::vector<WorkItem> initial_work(const TetMesh& m, const BadnessOracle& oracle) {
  std::vector<WorkItem> out;
  const TetId n = m.slot_count();
  for (TetId t = 0; t < n; ++t) {
    if (oracle.is_bad(m, t)) out.push_back({t, m.tet(t).gid});
  }
  return out;
}

void WatchdogClock::check(std::uint64_t insertions) const {
  if (wd_.max_insertions && insertions > wd_.max_insertions) {
    throw RefineTimeout("refinement exceeded " + std::to_string(wd_.max_insertions) + " insertions");
  }
  if (wd_.time_limit_s > 0.0 && elapsed() > wd_.time_limit_s) {
    throw RefineTimeout("refinement exceeded its " + std::to_string(wd_.time_limit_s) + " s wall-time cap");
  }
}

namespace {

RefineStats run_fifo(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, const RefineScope& scope,
                     const Watchdog& watchdog, CommitLog* log);

}  // namespace

RefineStats refine(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, const RefineScope& scope,
                   const Watchdog& watchdog, CommitLog* log) {
  rule.validate(img);
  return run_fifo(mesh, img, rule, scope, watchdog, log);
}

double default_coarse_h(const Box& bounds, int depth) { return bounds.diagonal() / std::ldexp(1.0, depth + 1); }

RefinementRule background_rule(double h_coarse, double rho_bar) {
  if (!(rho_bar >= 2.0)) throw UsageError("radius-edge bound must be >= 2, got " + std::to_string(rho_bar));
  if (!(h_coarse > 0.0) || !std::isfinite(h_coarse)) throw UsageError("coarse h must be > 0");
  RefinementRule r;
  r.rho_bar = rho_bar;
  r.sizing.h = h_coarse;
  r.include_background = true;
  return r;
}

RefineStats refine_background(TetMesh& mesh, const LabeledImage& img, double h_coarse, double rho_bar,
                              const RefineScope& scope, const Watchdog& watchdog, CommitLog* log) {
  return run_fifo(mesh, img, background_rule(h_coarse, rho_bar), scope, watchdog, log);
}

namespace {

RefineStats run_fifo(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, const RefineScope& scope,
                     const Watchdog& watchdog, CommitLog* log) {
  WatchdogClock clock(watchdog);
  BadnessOracle oracle(img, rule, scope);
  RefineStats st;

  std::deque<WorkItem> queue;
  for (const WorkItem& w : initial_work(mesh, oracle)) queue.push_back(w);
  st.initial_bad = queue.size();

  IdLease lease(mesh.ids());
  kernel::CommitParams prm;
  prm.ids = &lease;
  prm.locator = scope.locator;
  prm.writable = &scope.writable_leaves;
  prm.duplicate_tolerance = kDuplicateTolerance * mesh.bounds().diagonal();
  NoClaims claims;
  StepScratch s;

  std::uint64_t iter = 0;
  while (!queue.empty()) {
    if ((++iter & 255u) == 0) clock.check(st.insertions);
    const WorkItem item = queue.front();
    queue.pop_front();
    switch (detail::refine_step(mesh, oracle, item, claims, prm, s)) {
      case StepResult::Committed:
        ++st.insertions;
        if (log) log->push_back(s.point);
        if (watchdog.max_insertions) clock.check(st.insertions);
        for (TetId t : s.created) {
          if (oracle.is_bad(mesh, t)) queue.push_back({t, mesh.tet(t).gid});
        }
        if (mesh.tet(item.tet).gid == item.gid && oracle.is_bad(mesh, item.tet)) queue.push_back(item);
        break;
      case StepResult::Duplicate:
        ++st.duplicates;
        break;
      case StepResult::Rejected:
        ++st.rejected;
        break;
      case StepResult::Missing:
        ++st.deferred;
        break;
      case StepResult::Stale:
      case StepResult::Conflict:
        break;
    }
  }
  st.wall_seconds = clock.elapsed();
  return st;
}

}  // namespace

}  // namespace i2m
