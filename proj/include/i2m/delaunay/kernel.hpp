#pragma once

// Bowyer-Watson kernel: cavity growth and cavity retriangulation.
//
// Both primitives are templated on a Claimer so the sequential path (no
// claims) and the speculative parallel path (per-tet try-claims) run the same
// code. A Claimer provides `bool claim(TetId)`; a failed claim aborts the
// operation before any mutation.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/geom/predicates.hpp"
#include "i2m/geom/quality.hpp"

namespace i2m {

/// Maps a point to the decomposition leaf that owns it.
class LeafLocator {
 public:
  virtual ~LeafLocator() = default;
  virtual LeafId leaf_of(const Point3& p) const = 0;
};

struct NoClaims {
  bool claim(TetId) { return true; }
};

struct CavityFacet {
  TetId inner = 0;  // cavity tet
  int face = 0;     // face index within inner
  TetId outer = 0;  // tet across the face, or kBoundary
};

struct Cavity {
  Point3 point;
  std::vector<TetId> tets;
  std::vector<CavityFacet> boundary;

  void clear() {
    tets.clear();
    boundary.clear();
  }
};

enum class CavityStatus {
  Ok,
  Missing,   // growth needs a tet this submesh does not hold
  Conflict,  // a claim failed
};

/// Per-thread scratch for cavity growth: epoch-stamped visit marks.
class CavityScratch {
 public:
  void begin() {
    epoch_ += 2;
    if (epoch_ >= 0xFFFFFFF0u) {
      std::fill(stamp_.begin(), stamp_.end(), 0u);
      epoch_ = 2;
    }
  }
  // 0 = unvisited, 1 = in cavity, 2 = rejected.
  int state(TetId t) const {
    if (t >= stamp_.size()) return 0;
    const std::uint32_t s = stamp_[t];
    return s == epoch_ ? 1 : (s == epoch_ + 1 ? 2 : 0);
  }
  void mark(TetId t, bool inside) {
    if (t >= stamp_.size()) stamp_.resize(std::max<std::size_t>(t + 1, stamp_.size() * 2), 0u);
    stamp_[t] = inside ? epoch_ : epoch_ + 1;
  }

 private:
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
};

namespace kernel {

inline int insphere_of(const TetMesh& m, const Tet& t, const Point3& p) {
  return detail::insphere_perturbed_sign(m.point(t.v[0]), m.point(t.v[1]), m.point(t.v[2]), m.point(t.v[3]), p);
}

/// Orientation of t with v[f] replaced by p: negative when p is beyond face f.
inline int face_side(const TetMesh& m, const Tet& t, int f, const Point3& p) {
  std::array<Point3, 4> q{m.point(t.v[0]), m.point(t.v[1]), m.point(t.v[2]), m.point(t.v[3])};
  q[f] = p;
  return detail::orient3d_sign(q[0], q[1], q[2], q[3]);
}

enum class WalkStatus { Found, Missing, Conflict, Lost };

/// Visibility walk from `from` (already claimed) to a tet containing p,
/// claiming every tet entered. Exit faces are tried in index order, which
/// terminates on Delaunay meshes.
template <class Claimer>
WalkStatus walk_to(const TetMesh& m, TetId from, const Point3& p, Claimer& claimer, TetId& out) {
  TetId cur = from;
  const std::size_t cap = static_cast<std::size_t>(m.slot_count()) + 16;
  for (std::size_t step = 0; step < cap; ++step) {
    const Tet& t = m.tet(cur);
    int exit = -1;
    for (int f = 0; f < 4 && exit < 0; ++f) {
      if (face_side(m, t, f, p) < 0) exit = f;
    }
    if (exit < 0) {
      out = cur;
      return WalkStatus::Found;
    }
    const TetId nb = t.n[exit];
    if (nb == kBoundary) return WalkStatus::Lost;
    if (nb == kMissing) return WalkStatus::Missing;
    if (!claimer.claim(nb)) return WalkStatus::Conflict;
    cur = nb;
  }
  return WalkStatus::Lost;
}

/// Breadth-first search over the tets containing p (p on shared faces,
/// edges or vertices), starting from `from` which contains p. Calls
/// visit(tet) until it returns true; the found tet is stored in out.
template <class Claimer, class Visit>
WalkStatus search_containing(const TetMesh& m, TetId from, const Point3& p, Claimer& claimer, Visit&& visit,
                             TetId& out) {
  std::vector<TetId> queue{from};
  for (std::size_t i = 0; i < queue.size(); ++i) {
    const TetId t = queue[i];
    if (visit(t)) {
      out = t;
      return WalkStatus::Found;
    }
    const Tet& x = m.tet(t);
    for (int f = 0; f < 4; ++f) {
      if (face_side(m, x, f, p) != 0) continue;
      const TetId nb = x.n[f];
      if (nb == kBoundary) continue;
      if (nb == kMissing) return WalkStatus::Missing;
      if (std::find(queue.begin(), queue.end(), nb) != queue.end()) continue;
      if (!claimer.claim(nb)) return WalkStatus::Conflict;
      bool inside = true;
      for (int g = 0; g < 4 && inside; ++g) inside = face_side(m, m.tet(nb), g, p) >= 0;
      if (inside) queue.push_back(nb);
    }
  }
  return WalkStatus::Lost;
}

/// Breadth-first cavity growth from `start`, which must already be claimed
/// and must have p inside its circumsphere.
template <class Claimer>
CavityStatus grow_cavity(const TetMesh& m, const Point3& p, TetId start, Claimer& claimer, CavityScratch& scratch,
                         Cavity& out) {
  out.clear();
  out.point = p;
  scratch.begin();
  scratch.mark(start, true);
  out.tets.push_back(start);
  for (std::size_t i = 0; i < out.tets.size(); ++i) {
    const TetId t = out.tets[i];
    const Tet& tt = m.tet(t);
    for (int f = 0; f < 4; ++f) {
      const TetId nb = tt.n[f];
      if (nb == kBoundary) {
        out.boundary.push_back({t, f, kBoundary});
        continue;
      }
      if (nb == kMissing) return CavityStatus::Missing;
      const int st = scratch.state(nb);
      if (st == 1) continue;
      if (st == 2) {
        out.boundary.push_back({t, f, nb});
        continue;
      }
      if (!claimer.claim(nb)) return CavityStatus::Conflict;
      if (insphere_of(m, m.tet(nb), p) > 0) {
        scratch.mark(nb, true);
        out.tets.push_back(nb);
      } else {
        scratch.mark(nb, false);
        out.boundary.push_back({t, f, nb});
      }
    }
  }
  return CavityStatus::Ok;
}

enum class CommitStatus { Committed, Duplicate, Rejected };

struct CommitParams {
  IdLease* ids = nullptr;
  const LeafLocator* locator = nullptr;            // null: every new tet owned by leaf 0
  const std::vector<char>* writable = nullptr;     // null or empty: any owner allowed
  double duplicate_tolerance = 0.0;                // absolute distance
};

struct CommitScratch {
  struct Plan {
    std::size_t facet;  // index into cavity.boundary
    LeafId owner;
    std::array<TetId, 4> link;  // new-tet plan index across each face, or kBoundary
  };
  struct EdgeRef {
    std::uint64_t key;
    std::uint32_t plan;
    int face;
  };
  struct FacetCopy {
    std::array<VertexId, 4> v;
    int face;
    TetId outer;
  };
  std::vector<Plan> plans;
  std::vector<EdgeRef> edges;
  std::vector<TetId> slots;
  std::vector<FacetCopy> facets;
};

inline std::uint64_t edge_key(VertexId a, VertexId b) {
  return a < b ? (static_cast<std::uint64_t>(a) << 32) | b : (static_cast<std::uint64_t>(b) << 32) | a;
}

/// Retriangulates a grown cavity by fanning its boundary facets to the
/// cavity point. Boundary facets on the domain hull that are coplanar with
/// the point are dropped (the point splits them). Validation happens before
/// any mutation: Duplicate and Rejected leave the mesh untouched. Fresh slots
/// are claimed through the claimer so they stay private until released.
template <class Claimer>
CommitStatus commit_cavity(TetMesh& m, const Cavity& cav, const CommitParams& prm, Claimer& claimer,
                           CommitScratch& cs, std::vector<TetId>& created) {
  created.clear();
  const Point3& p = cav.point;

  const double tol2 = prm.duplicate_tolerance * prm.duplicate_tolerance;
  for (TetId t : cav.tets) {
    for (VertexId v : m.tet(t).v) {
      if (distance2(m.point(v), p) <= tol2) return CommitStatus::Duplicate;
    }
  }

  cs.plans.clear();
  cs.edges.clear();
  for (std::size_t b = 0; b < cav.boundary.size(); ++b) {
    const CavityFacet& fc = cav.boundary[b];
    const Tet& inner = m.tet(fc.inner);
    std::array<Point3, 4> q{m.point(inner.v[0]), m.point(inner.v[1]), m.point(inner.v[2]), m.point(inner.v[3])};
    q[fc.face] = p;
    const int o = detail::orient3d_sign(q[0], q[1], q[2], q[3]);
    if (o <= 0) {
      if (o == 0 && fc.outer == kBoundary) continue;
      return CommitStatus::Rejected;
    }
    LeafId owner = 0;
    if (prm.locator) owner = prm.locator->leaf_of(barycenter(q[0], q[1], q[2], q[3]));
    if (prm.writable && !prm.writable->empty()) {
      if (owner < 0 || static_cast<std::size_t>(owner) >= prm.writable->size() || !(*prm.writable)[owner]) {
        return CommitStatus::Rejected;
      }
    }
    const auto plan = static_cast<std::uint32_t>(cs.plans.size());
    cs.plans.push_back({b, owner, {kBoundary, kBoundary, kBoundary, kBoundary}});
    for (int j = 0; j < 4; ++j) {
      if (j == fc.face) continue;
      VertexId e[2];
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        if (k != j && k != fc.face) e[n++] = inner.v[k];
      }
      cs.edges.push_back({edge_key(e[0], e[1]), plan, j});
    }
  }
  if (cs.plans.empty()) return CommitStatus::Rejected;

  std::sort(cs.edges.begin(), cs.edges.end(), [](const CommitScratch::EdgeRef& a, const CommitScratch::EdgeRef& b) {
    return a.key != b.key ? a.key < b.key : a.plan < b.plan;
  });
  for (std::size_t i = 0; i < cs.edges.size();) {
    std::size_t j = i + 1;
    while (j < cs.edges.size() && cs.edges[j].key == cs.edges[i].key) ++j;
    if (j - i == 2) {
      cs.plans[cs.edges[i].plan].link[cs.edges[i].face] = cs.edges[i + 1].plan;
      cs.plans[cs.edges[i + 1].plan].link[cs.edges[i + 1].face] = cs.edges[i].plan;
    } else if (j - i != 1) {
      return CommitStatus::Rejected;
    }
    i = j;
  }
  // A face left unmatched must lie on the hull: it is only legal when the
  // cavity dropped a coplanar hull facet through that edge.
  if (cs.plans.size() == cav.boundary.size()) {
    for (const auto& pl : cs.plans) {
      for (int j = 0; j < 4; ++j) {
        if (j != cav.boundary[pl.facet].face && pl.link[j] == kBoundary) return CommitStatus::Rejected;
      }
    }
  }

  // Slots: reuse cavity slots first, then the free list, then fresh ones.
  cs.slots.clear();
  for (std::size_t k = 0; k < cs.plans.size(); ++k) {
    if (k < cav.tets.size()) {
      cs.slots.push_back(cav.tets[k]);
      continue;
    }
    TetId s;
    bool got = false;
    while (m.pop_free(s)) {
      if (claimer.claim(s)) {
        got = true;
        break;
      }
      m.push_free(s);
      break;
    }
    if (!got) {
      s = m.push_slot();
      claimer.claim(s);
    }
    cs.slots.push_back(s);
  }

  // Old tets die; remember facets before overwriting reused slots.
  cs.facets.clear();
  for (const auto& pl : cs.plans) {
    const CavityFacet& fc = cav.boundary[pl.facet];
    cs.facets.push_back({m.tet(fc.inner).v, fc.face, fc.outer});
  }
  for (TetId t : cav.tets) m.tet(t).alive = false;
  for (std::size_t k = cs.plans.size(); k < cav.tets.size(); ++k) m.push_free(cav.tets[k]);

  const VertexId pv = m.add_vertex(p, prm.ids->vertex());
  for (std::size_t k = 0; k < cs.plans.size(); ++k) {
    const auto& pl = cs.plans[k];
    const auto& fc = cs.facets[k];
    Tet nt;
    nt.v = fc.v;
    nt.v[fc.face] = pv;
    for (int j = 0; j < 4; ++j) nt.n[j] = pl.link[j] == kBoundary ? kBoundary : cs.slots[pl.link[j]];
    nt.n[fc.face] = fc.outer;
    nt.gid = prm.ids->tet();
    nt.owner = pl.owner;
    nt.alive = true;
    m.tet(cs.slots[k]) = nt;
  }
  // Outer tets point back through the face whose opposite vertex is not on
  // the facet (slot numbers may have been recycled, vertex ids are stable).
  for (std::size_t k = 0; k < cs.plans.size(); ++k) {
    const auto& fc = cs.facets[k];
    if (fc.outer == kBoundary) continue;
    Tet& o = m.tet(fc.outer);
    for (int j = 0; j < 4; ++j) {
      const VertexId ov = o.v[j];
      bool on_facet = false;
      for (int i = 0; i < 4; ++i) {
        if (i != fc.face && fc.v[i] == ov) on_facet = true;
      }
      if (!on_facet) {
        o.n[j] = cs.slots[k];
        break;
      }
    }
  }
  m.add_alive(static_cast<std::int64_t>(cs.plans.size()) - static_cast<std::int64_t>(cav.tets.size()));
  created.assign(cs.slots.begin(), cs.slots.end());
  return CommitStatus::Committed;
}

}  // namespace kernel

}  // namespace i2m
