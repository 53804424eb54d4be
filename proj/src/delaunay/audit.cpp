#include "i2m/delaunay/audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "i2m/common/bytes.hpp"
#include "i2m/geom/predicates.hpp"
#include "i2m/geom/quality.hpp"

namespace i2m {

std::vector<DelaunayViolation> audit_delaunay(const TetMesh& mesh) {
  const std::size_t nv = mesh.vertex_count();
  // Vertices sorted by x so each sphere only scans its x-slab.
  std::vector<VertexId> by_x(nv);
  for (std::size_t i = 0; i < nv; ++i) by_x[i] = static_cast<VertexId>(i);
  std::sort(by_x.begin(), by_x.end(), [&](VertexId a, VertexId b) { return mesh.point(a).x < mesh.point(b).x; });
  std::vector<double> xs(nv);
  for (std::size_t i = 0; i < nv; ++i) xs[i] = mesh.point(by_x[i]).x;

  std::vector<DelaunayViolation> out;
  const TetId nt = mesh.slot_count();
  for (TetId t = 0; t < nt; ++t) {
    const Tet& x = mesh.tet(t);
    if (!x.alive) continue;
    const auto c = mesh.corners(t);
    const Point3 cc = circumcenter(c[0], c[1], c[2], c[3]);
    double r2 = 0.0;
    for (const auto& q : c) r2 = std::max(r2, distance2(cc, q));
    if (!std::isfinite(r2)) {
      // Flat tet: no usable sphere; test every vertex exactly.
      r2 = std::numeric_limits<double>::infinity();
    }
    const double slack = 1e-4 * r2 + 1e-300;
    const double r = std::sqrt(r2 + slack);
    auto lo = std::lower_bound(xs.begin(), xs.end(), std::isfinite(r) ? cc.x - r : -INFINITY);
    auto hi = std::upper_bound(xs.begin(), xs.end(), std::isfinite(r) ? cc.x + r : INFINITY);
    for (auto it = lo; it != hi; ++it) {
      const VertexId v = by_x[static_cast<std::size_t>(it - xs.begin())];
      if (v == x.v[0] || v == x.v[1] || v == x.v[2] || v == x.v[3]) continue;
      const Point3& p = mesh.point(v);
      if (std::isfinite(r2) && distance2(cc, p) > r2 + slack) continue;
      if (detail::insphere_sign(c[0], c[1], c[2], c[3], p) > 0) out.push_back({t, v});
    }
  }
  return out;
}

namespace {

std::array<VertexId, 3> facet_of(const Tet& t, int f) {
  std::array<VertexId, 3> k;
  int n = 0;
  for (int i = 0; i < 4; ++i) {
    if (i != f) k[n++] = t.v[i];
  }
  std::sort(k.begin(), k.end());
  return k;
}

struct FacetHash {
  std::size_t operator()(const std::array<VertexId, 3>& k) const {
    std::uint64_t h = k[0];
    h = h * 0x9e3779b97f4a7c15ull ^ k[1];
    h = h * 0x9e3779b97f4a7c15ull ^ k[2];
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

bool on_hull_plane(const TetMesh& m, const std::array<VertexId, 3>& f) {
  const Box& b = m.bounds();
  const Point3 p0 = m.point(f[0]), p1 = m.point(f[1]), p2 = m.point(f[2]);
  auto same = [](double a, double b, double c, double v) { return a == v && b == v && c == v; };
  return same(p0.x, p1.x, p2.x, b.lo.x) || same(p0.x, p1.x, p2.x, b.hi.x) || same(p0.y, p1.y, p2.y, b.lo.y) ||
         same(p0.y, p1.y, p2.y, b.hi.y) || same(p0.z, p1.z, p2.z, b.lo.z) || same(p0.z, p1.z, p2.z, b.hi.z);
}

}  // namespace

std::vector<AdjacencyIssue> audit_adjacency(const TetMesh& mesh, bool allow_missing) {
  std::vector<AdjacencyIssue> out;
  std::unordered_map<std::array<VertexId, 3>, int, FacetHash> facet_uses;
  const TetId nt = mesh.slot_count();
  const std::size_t nv = mesh.vertex_count();
  for (TetId t = 0; t < nt; ++t) {
    const Tet& x = mesh.tet(t);
    if (!x.alive) continue;
    bool vertices_ok = true;
    for (VertexId v : x.v) {
      if (v >= nv) vertices_ok = false;
    }
    if (!vertices_ok) {
      out.push_back({t, -1, "vertex id out of range"});
      continue;
    }
    const auto c = mesh.corners(t);
    if (detail::orient3d_sign(c[0], c[1], c[2], c[3]) <= 0) out.push_back({t, -1, "not positively oriented"});
    for (int f = 0; f < 4; ++f) {
      const auto key = facet_of(x, f);
      ++facet_uses[key];
      const TetId nb = x.n[f];
      if (nb == kBoundary) {
        if (!on_hull_plane(mesh, key)) out.push_back({t, f, "boundary face not on the domain hull"});
        continue;
      }
      if (nb == kMissing) {
        if (!allow_missing) out.push_back({t, f, "neighbor missing from mesh"});
        continue;
      }
      if (nb >= nt || !mesh.tet(nb).alive) {
        out.push_back({t, f, "neighbor is not an alive tet"});
        continue;
      }
      const Tet& y = mesh.tet(nb);
      int back = -1;
      for (int g = 0; g < 4; ++g) {
        if (y.n[g] == t) back = g;
      }
      if (back < 0) {
        out.push_back({t, f, "neighbor does not link back (asymmetric adjacency)"});
      } else if (facet_of(y, back) != key) {
        out.push_back({t, f, "neighbor links back through a different facet"});
      }
    }
  }
  for (const auto& [key, uses] : facet_uses) {
    if (uses > 2) out.push_back({kBoundary, -1, "facet shared by more than two tets"});
  }
  return out;
}

std::uint64_t geometric_signature(const TetMesh& mesh) {
  using Key = std::array<std::array<double, 3>, 4>;
  std::vector<Key> tets;
  tets.reserve(mesh.alive_count());
  for (TetId t : mesh.alive_tets()) {
    Key k;
    const auto c = mesh.corners(t);
    for (int i = 0; i < 4; ++i) k[i] = {c[i].x, c[i].y, c[i].z};
    std::sort(k.begin(), k.end());
    tets.push_back(k);
  }
  std::sort(tets.begin(), tets.end());
  ByteWriter w;
  w.u64(tets.size());
  for (const auto& k : tets) {
    for (const auto& p : k) {
      for (double x : p) w.f64(x);
    }
  }
  return fnv1a64(w.buffer());
}

std::vector<TetId> scan_bad(const TetMesh& mesh, const BadnessOracle& oracle) {
  std::vector<TetId> out;
  const TetId nt = mesh.slot_count();
  for (TetId t = 0; t < nt; ++t) {
    if (oracle.is_bad(mesh, t)) out.push_back(t);
  }
  return out;
}

}  // namespace i2m
