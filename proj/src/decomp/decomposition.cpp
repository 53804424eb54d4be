#include "i2m/decomp/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "i2m/common/error.hpp"
#include "i2m/geom/quality.hpp"
#include "json.hpp"

namespace i2m {

namespace {

double axis_of(const Point3& p, int a) { return a == 0 ? p.x : (a == 1 ? p.y : p.z); }

}  // namespace

Decomposition::Decomposition(int depth, const Box& bounds) : depth_(depth), bounds_(bounds) {
  if (depth < 0 || depth > kMaxDepth) {
    throw DecompositionError("octree depth must be in [0, " + std::to_string(kMaxDepth) + "], got " +
                             std::to_string(depth));
  }
  const Point3 e = bounds.extent();
  if (!(e.x > 0 && e.y > 0 && e.z > 0)) throw DecompositionError("decomposition box has zero volume");
  side_ = 1 << depth;
  for (int a = 0; a < 3; ++a) {
    const double lo = axis_of(bounds.lo, a), hi = axis_of(bounds.hi, a);
    auto& pl = planes_[a];
    pl.resize(side_ + 1);
    for (int i = 0; i <= side_; ++i) pl[i] = lo + (hi - lo) * i / side_;
    pl[0] = lo;
    pl[side_] = hi;
  }
  leaves_.resize(static_cast<std::size_t>(side_) * side_ * side_);
}

LeafId Decomposition::check(LeafId leaf) const {
  if (leaf < 0 || static_cast<std::size_t>(leaf) >= leaves_.size()) {
    throw DecompositionError("leaf id " + std::to_string(leaf) + " out of range");
  }
  return leaf;
}

LeafId Decomposition::id(const LeafIndex& ix) const {
  if (ix.i < 0 || ix.j < 0 || ix.k < 0 || ix.i >= side_ || ix.j >= side_ || ix.k >= side_) {
    throw DecompositionError("leaf index (" + std::to_string(ix.i) + "," + std::to_string(ix.j) + "," +
                             std::to_string(ix.k) + ") out of range");
  }
  return (ix.i * side_ + ix.j) * side_ + ix.k;
}

LeafIndex Decomposition::index(LeafId leaf) const {
  check(leaf);
  return {leaf / (side_ * side_), (leaf / side_) % side_, leaf % side_};
}

Box Decomposition::leaf_box(LeafId leaf) const {
  const LeafIndex ix = index(leaf);
  return {{planes_[0][ix.i], planes_[1][ix.j], planes_[2][ix.k]},
          {planes_[0][ix.i + 1], planes_[1][ix.j + 1], planes_[2][ix.k + 1]}};
}

int Decomposition::axis_cell(int axis, double x) const {
  const auto& pl = planes_[axis];
  if (!(x >= pl.front() && x <= pl.back())) return -1;
  // First plane >= x closes the cell from above; ties go to the lower cell.
  const auto it = std::lower_bound(pl.begin() + 1, pl.end(), x);
  return static_cast<int>(it - pl.begin()) - 1;
}

LeafId Decomposition::leaf_of(const Point3& p) const {
  const int i = axis_cell(0, p.x), j = axis_cell(1, p.y), k = axis_cell(2, p.z);
  if (i < 0 || j < 0 || k < 0) return -1;
  return (i * side_ + j) * side_ + k;
}

int Decomposition::chebyshev(LeafId a, LeafId b) const {
  const LeafIndex x = index(a), y = index(b);
  return std::max({std::abs(x.i - y.i), std::abs(x.j - y.j), std::abs(x.k - y.k)});
}

std::vector<LeafId> Decomposition::influence(LeafId leaf) const {
  const LeafIndex c = index(leaf);
  std::vector<LeafId> out;
  const int r = kBufferLayers;
  for (int i = std::max(0, c.i - r); i <= std::min(side_ - 1, c.i + r); ++i) {
    for (int j = std::max(0, c.j - r); j <= std::min(side_ - 1, c.j + r); ++j) {
      for (int k = std::max(0, c.k - r); k <= std::min(side_ - 1, c.k + r); ++k) out.push_back(id({i, j, k}));
    }
  }
  return out;
}

bool Decomposition::independent(LeafId a, LeafId b) const { return chebyshev(a, b) > 2 * kBufferLayers; }

void Decomposition::mark_dirty(std::span<const LeafId> leaves) {
  for (LeafId l : leaves) {
    auto& x = leaves_.at(check(l));
    x.dirty = true;
    x.stuck = false;
  }
}

void Decomposition::mark_clean(LeafId leaf) {
  auto& x = leaves_.at(check(leaf));
  x.dirty = false;
  x.stuck = false;
}

void Decomposition::mark_stuck(LeafId leaf) {
  auto& x = leaves_.at(check(leaf));
  x.dirty = true;
  x.stuck = true;
}

std::size_t Decomposition::dirty_count() const {
  return static_cast<std::size_t>(std::count_if(leaves_.begin(), leaves_.end(), [](const Leaf& l) { return l.dirty; }));
}

std::optional<LeafId> Decomposition::next_dirty(std::span<const LeafId> active) const {
  std::optional<LeafId> best;
  for (std::size_t n = 0; n < leaves_.size(); ++n) {
    const Leaf& x = leaves_[n];
    if (!x.dirty || x.stuck) continue;
    const auto l = static_cast<LeafId>(n);
    if (best && x.count <= leaves_[*best].count) continue;
    bool ok = true;
    for (LeafId a : active) {
      if (!independent(l, a)) {
        ok = false;
        break;
      }
    }
    if (ok) best = l;
  }
  return best;
}

void partition(TetMesh& mesh, Decomposition& dec, const BadnessOracle* oracle) {
  std::vector<std::uint64_t> counts(dec.leaf_count(), 0);
  std::vector<char> bad(dec.leaf_count(), 0);
  const TetId n = mesh.slot_count();
  for (TetId t = 0; t < n; ++t) {
    Tet& x = mesh.tet(t);
    if (!x.alive) continue;
    const auto c = mesh.corners(t);
    const Point3 b = barycenter(c[0], c[1], c[2], c[3]);
    const LeafId l = dec.leaf_of(b);
    if (l < 0) {
      throw DecompositionError("tet " + std::to_string(t) + " has its barycenter outside the decomposition box");
    }
    x.owner = l;
    ++counts[l];
  }
  std::vector<LeafId> dirty;
  if (oracle) {
    for (TetId t = 0; t < n; ++t) {
      const Tet& x = mesh.tet(t);
      if (x.alive && !bad[x.owner] && oracle->is_bad(mesh, t)) bad[x.owner] = 1;
    }
  }
  for (std::size_t l = 0; l < counts.size(); ++l) {
    dec.set_count(static_cast<LeafId>(l), counts[l]);
    if (bad[l]) dirty.push_back(static_cast<LeafId>(l));
  }
  dec.mark_dirty(dirty);
}

std::vector<GrantViolation> audit_grant_log(const Decomposition& dec, std::span<const GrantRecord> log) {
  std::vector<GrantViolation> out;
  std::vector<LeafId> active;
  for (const GrantRecord& r : log) {
    if (r.kind == GrantRecord::Kind::Grant) {
      for (LeafId a : active) {
        if (!dec.independent(a, r.leaf)) out.push_back({a, r.leaf, r.seq});
      }
      active.push_back(r.leaf);
    } else {
      const auto it = std::find(active.begin(), active.end(), r.leaf);
      if (it == active.end()) {
        out.push_back({r.leaf, r.leaf, r.seq});
      } else {
        active.erase(it);
      }
    }
  }
  return out;
}

void write_grant_log(std::ostream& out, std::span<const GrantRecord> log) {
  for (const GrantRecord& r : log) {
    nlohmann::json j{{"seq", r.seq},
                     {"event", r.kind == GrantRecord::Kind::Grant ? "grant" : "release"},
                     {"leaf", r.leaf},
                     {"worker", r.worker},
                     {"t", r.t}};
    out << j.dump() << '\n';
  }
}

std::vector<GrantRecord> read_grant_log(std::istream& in) {
  std::vector<GrantRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      GrantRecord r;
      r.seq = j.at("seq").get<std::uint64_t>();
      const auto ev = j.at("event").get<std::string>();
      if (ev != "grant" && ev != "release") throw DecompositionError("grant log: unknown event '" + ev + "'");
      r.kind = ev == "grant" ? GrantRecord::Kind::Grant : GrantRecord::Kind::Release;
      r.leaf = j.at("leaf").get<LeafId>();
      r.worker = j.at("worker").get<int>();
      r.t = j.at("t").get<double>();
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw DecompositionError(std::string("grant log: ") + e.what());
    }
  }
  return out;
}

}  // namespace i2m
