#include "i2m/delaunay/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "i2m/common/error.hpp"

namespace i2m {

namespace {

// Links face neighbors of the given tets by matching sorted vertex triples.
void link_by_faces(TetMesh& m, const std::vector<TetId>& tets) {
  std::map<std::array<VertexId, 3>, std::pair<TetId, int>> open;
  for (TetId t : tets) {
    Tet& x = m.tet(t);
    for (int f = 0; f < 4; ++f) {
      std::array<VertexId, 3> key;
      int n = 0;
      for (int i = 0; i < 4; ++i) {
        if (i != f) key[n++] = x.v[i];
      }
      std::sort(key.begin(), key.end());
      auto it = open.find(key);
      if (it == open.end()) {
        open.emplace(key, std::make_pair(t, f));
        x.n[f] = kBoundary;
      } else {
        x.n[f] = it->second.first;
        m.tet(it->second.first).n[it->second.second] = t;
        open.erase(it);
      }
    }
  }
}

}  // namespace

TetMesh bootstrap_box(const Box& box, std::shared_ptr<GidSpace> ids) {
  const Point3 ext = box.extent();
  if (!(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) || !is_finite(box.lo) || !is_finite(box.hi)) {
    throw MeshError("cannot bootstrap a degenerate (zero-volume) bounding box");
  }
  TetMesh m(std::move(ids));
  m.set_bounds(box);
  IdLease lease(m.ids());
  std::array<Point3, 8> c;
  std::array<VertexId, 8> vid;
  for (int i = 0; i < 8; ++i) {
    c[i] = {(i & 1) ? box.hi.x : box.lo.x, (i & 2) ? box.hi.y : box.lo.y, (i & 4) ? box.hi.z : box.lo.z};
    vid[i] = m.add_vertex(c[i], lease.vertex());
  }

  std::vector<TetId> made;
  double volume = 0.0;
  for (int a = 0; a < 8; ++a) {
    for (int b = a + 1; b < 8; ++b) {
      for (int d = b + 1; d < 8; ++d) {
        for (int e = d + 1; e < 8; ++e) {
          std::array<int, 4> q{a, b, d, e};
          int o = detail::orient3d_sign(c[q[0]], c[q[1]], c[q[2]], c[q[3]]);
          if (o == 0) continue;
          if (o < 0) std::swap(q[2], q[3]);
          bool empty = true;
          for (int k = 0; k < 8 && empty; ++k) {
            if (k == a || k == b || k == d || k == e) continue;
            if (detail::insphere_perturbed_sign(c[q[0]], c[q[1]], c[q[2]], c[q[3]], c[k]) > 0) empty = false;
          }
          if (!empty) continue;
          const TetId t = m.push_slot();
          Tet& x = m.tet(t);
          for (int i = 0; i < 4; ++i) x.v[i] = vid[q[i]];
          x.gid = lease.tet();
          x.owner = 0;
          x.alive = true;
          made.push_back(t);
          volume += std::fabs(dot(c[q[1]] - c[q[0]], cross(c[q[2]] - c[q[0]], c[q[3]] - c[q[0]]))) / 6.0;
        }
      }
    }
  }
  const double box_volume = ext.x * ext.y * ext.z;
  if (made.size() < 5 || made.size() > 6 || std::fabs(volume - box_volume) > 1e-9 * box_volume) {
    throw MeshError("bootstrap produced an invalid box triangulation");
  }
  link_by_faces(m, made);
  m.add_alive(static_cast<std::int64_t>(made.size()));
  return m;
}

TetMesh bootstrap(const LabeledImage& img, std::shared_ptr<GidSpace> ids) {
  return bootstrap_box(img.bounds(), std::move(ids));
}

namespace {

using kernel::face_side;

bool contains(const TetMesh& m, TetId t, const Point3& p) {
  const Tet& x = m.tet(t);
  for (int f = 0; f < 4; ++f) {
    if (face_side(m, x, f, p) < 0) return false;
  }
  return true;
}

}  // namespace

std::optional<TetId> try_locate(const TetMesh& m, const Point3& p, TetId hint) {
  if (hint >= m.slot_count() || !m.tet(hint).alive) {
    hint = kBoundary;
    for (TetId t = 0; t < m.slot_count(); ++t) {
      if (m.tet(t).alive) {
        hint = t;
        break;
      }
    }
    if (hint == kBoundary) return std::nullopt;
  }
  TetId cur = hint;
  const std::size_t max_steps = 4 * m.alive_count() + 64;
  std::uint32_t rot = 0x9e3779b9u;
  bool found = false;
  for (std::size_t step = 0; step < max_steps; ++step) {
    const Tet& t = m.tet(cur);
    rot = rot * 1664525u + 1013904223u;
    const int start = static_cast<int>(rot >> 30);
    int exit_face = -1;
    for (int k = 0; k < 4; ++k) {
      const int f = (start + k) & 3;
      if (face_side(m, t, f, p) < 0) {
        exit_face = f;
        break;
      }
    }
    if (exit_face < 0) {
      found = true;
      break;
    }
    const TetId nb = t.n[exit_face];
    if (nb == kBoundary || nb == kMissing) return std::nullopt;
    cur = nb;
  }
  if (!found) return std::nullopt;

  // Collect every tet containing p through faces p lies on; keep the lowest id.
  std::vector<TetId> stack{cur};
  std::vector<TetId> seen{cur};
  TetId best = cur;
  while (!stack.empty()) {
    const TetId t = stack.back();
    stack.pop_back();
    const Tet& x = m.tet(t);
    for (int f = 0; f < 4; ++f) {
      if (face_side(m, x, f, p) != 0) continue;
      const TetId nb = x.n[f];
      if (nb == kBoundary || nb == kMissing) continue;
      if (std::find(seen.begin(), seen.end(), nb) != seen.end()) continue;
      seen.push_back(nb);
      if (!contains(m, nb, p)) continue;
      best = std::min(best, nb);
      stack.push_back(nb);
    }
  }
  return best;
}

TetId locate(const TetMesh& mesh, const Point3& p, TetId hint) {
  if (!is_finite(p)) throw GeometryError("locate: non-finite point");
  auto t = try_locate(mesh, p, hint);
  if (!t) throw MeshError("locate: point lies outside the mesh hull");
  return *t;
}

Cavity compute_cavity(const TetMesh& mesh, const Point3& p, TetId start) {
  if (!is_finite(p)) throw GeometryError("compute_cavity: non-finite point");
  const double tol2 = std::pow(kDuplicateTolerance * mesh.bounds().diagonal(), 2);
  for (VertexId v : mesh.tet(start).v) {
    if (distance2(mesh.point(v), p) <= tol2) throw DuplicatePointError("point coincides with an existing vertex");
  }
  Cavity cav;
  CavityScratch scratch;
  NoClaims claims;
  // A tet containing p on its boundary may have p exactly on its sphere;
  // the perturbed predicate still decides it, but growth must start from a
  // tet that really is in the cavity.
  if (kernel::insphere_of(mesh, mesh.tet(start), p) <= 0) {
    const Tet& s = mesh.tet(start);
    bool moved = false;
    for (int f = 0; f < 4 && !moved; ++f) {
      const TetId nb = s.n[f];
      if (nb == kBoundary || nb == kMissing) continue;
      if (kernel::insphere_of(mesh, mesh.tet(nb), p) > 0) {
        start = nb;
        moved = true;
      }
    }
    if (!moved) throw MeshError("compute_cavity: start tet does not conflict with the point");
  }
  if (kernel::grow_cavity(mesh, p, start, claims, scratch, cav) != CavityStatus::Ok) {
    throw MeshError("compute_cavity: cavity reaches tets absent from this submesh");
  }
  return cav;
}

std::vector<TetId> insert(TetMesh& mesh, const Point3& p, const Cavity& cavity) {
  if (!(cavity.point == p)) throw MeshError("insert: cavity was computed for a different point");
  IdLease lease(mesh.ids());
  kernel::CommitParams prm;
  prm.ids = &lease;
  prm.duplicate_tolerance = kDuplicateTolerance * mesh.bounds().diagonal();
  NoClaims claims;
  kernel::CommitScratch cs;
  std::vector<TetId> created;
  switch (kernel::commit_cavity(mesh, cavity, prm, claims, cs, created)) {
    case kernel::CommitStatus::Committed:
      return created;
    case kernel::CommitStatus::Duplicate:
      throw DuplicatePointError("insert: point coincides with an existing vertex");
    case kernel::CommitStatus::Rejected:
      break;
  }
  throw MeshError("insert: cavity is not star-shaped from the point");
}

std::vector<TetId> insert_point(TetMesh& mesh, const Point3& p, TetId hint) {
  const TetId start = locate(mesh, p, hint);
  return insert(mesh, p, compute_cavity(mesh, p, start));
}

}  // namespace i2m
