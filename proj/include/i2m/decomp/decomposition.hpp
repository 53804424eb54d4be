#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "i2m/delaunay/kernel.hpp"
#include "i2m/delaunay/refine.hpp"
#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/geom/point.hpp"

namespace i2m {

struct LeafIndex {
  int i = 0, j = 0, k = 0;
  friend bool operator==(const LeafIndex&, const LeafIndex&) = default;
};

/// Uniform octree of depth d over a box: 8^d leaves.
///
/// Leaf ids are (i * side + j) * side + k, so ascending id order is
/// lexicographic (i, j, k) order. Split planes are computed once per axis and
/// shared by both adjacent leaves, so leaf boxes tile the box exactly.
class Decomposition : public LeafLocator {
 public:
  static constexpr int kMaxDepth = 6;
  /// Chebyshev index radius of an influence region (two buffer layers).
  static constexpr int kBufferLayers = 2;

  Decomposition(int depth, const Box& bounds);

  int depth() const { return depth_; }
  int side() const { return side_; }
  std::size_t leaf_count() const { return leaves_.size(); }
  const Box& bounds() const { return bounds_; }

  LeafId id(const LeafIndex& ix) const;
  LeafIndex index(LeafId leaf) const;
  Box leaf_box(LeafId leaf) const;

  /// Leaf containing p. Points on a split plane go to the lower-index leaf.
  /// Returns -1 outside the box.
  LeafId leaf_of(const Point3& p) const override;

  /// Leaves within Chebyshev index distance 2 of `leaf`, ascending.
  std::vector<LeafId> influence(LeafId leaf) const;
  /// Disjoint influence regions, i.e. Chebyshev distance >= 5.
  bool independent(LeafId a, LeafId b) const;
  int chebyshev(LeafId a, LeafId b) const;

  bool dirty(LeafId leaf) const { return leaves_.at(check(leaf)).dirty; }
  bool stuck(LeafId leaf) const { return leaves_.at(check(leaf)).stuck; }
  std::uint64_t count(LeafId leaf) const { return leaves_.at(check(leaf)).count; }
  int owner(LeafId leaf) const { return leaves_.at(check(leaf)).owner; }
  void set_count(LeafId leaf, std::uint64_t n) { leaves_.at(check(leaf)).count = n; }
  void set_owner(LeafId leaf, int rank) { leaves_.at(check(leaf)).owner = rank; }

  void mark_dirty(std::span<const LeafId> leaves);
  void mark_clean(LeafId leaf);
  /// Dirty but excluded from scheduling until a neighbouring task touches it.
  void mark_stuck(LeafId leaf);
  std::size_t dirty_count() const;

  /// Dirty, non-stuck leaf independent of every active leaf; largest count
  /// first, then lowest id.
  std::optional<LeafId> next_dirty(std::span<const LeafId> active) const;

 private:
  struct Leaf {
    std::uint64_t count = 0;
    int owner = 0;
    bool dirty = false;
    bool stuck = false;
  };

  LeafId check(LeafId leaf) const;
  int axis_cell(int axis, double x) const;

  int depth_;
  int side_;
  Box bounds_;
  std::array<std::vector<double>, 3> planes_;  // side + 1 split coordinates per axis
  std::vector<Leaf> leaves_;
};

/// Assigns every alive tet to the leaf holding its barycenter and refreshes
/// the per-leaf counts. With an oracle, leaves holding bad tets are marked
/// dirty. Throws DecompositionError for a barycenter outside the box.
void partition(TetMesh& mesh, Decomposition& dec, const BadnessOracle* oracle = nullptr);

/// Scheduler grant log: one record per grant and per completion.
struct GrantRecord {
  enum class Kind { Grant, Release };
  std::uint64_t seq = 0;
  Kind kind = Kind::Grant;
  LeafId leaf = 0;
  int worker = 0;
  double t = 0.0;  // seconds since the master started
};

struct GrantViolation {
  LeafId a = 0, b = 0;
  std::uint64_t seq = 0;  // grant that created the overlap
};

/// Replays the log and reports every grant made while a dependent leaf was
/// active, plus malformed sequences (release without grant).
std::vector<GrantViolation> audit_grant_log(const Decomposition& dec, std::span<const GrantRecord> log);

void write_grant_log(std::ostream& out, std::span<const GrantRecord> log);
std::vector<GrantRecord> read_grant_log(std::istream& in);

}  // namespace i2m
