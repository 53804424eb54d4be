#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "i2m/common/stable_vector.hpp"
#include "i2m/geom/point.hpp"

namespace i2m {

using VertexId = std::uint32_t;
using TetId = std::uint32_t;
using GlobalId = std::uint64_t;
using LeafId = std::int32_t;

/// Neighbor across a face of the domain hull.
inline constexpr TetId kBoundary = 0xFFFFFFFFu;
/// Neighbor exists in the global mesh but not in this submesh.
inline constexpr TetId kMissing = 0xFFFFFFFEu;

/// Face i of a tet is the triangle opposite v[i]; n[i] is the tet across it.
struct Tet {
  std::array<VertexId, 4> v{};
  std::array<TetId, 4> n{};
  GlobalId gid = 0;
  LeafId owner = 0;
  bool alive = false;
};

struct Vertex {
  Point3 p;
  GlobalId gid = 0;
};

/// Global id allocation. Ids are namespaced by rank in the top 24 bits so
/// ranks never collide; within a rank, threads lease blocks from shared
/// counters.
class GidSpace {
 public:
  static constexpr int kSeqBits = 40;

  explicit GidSpace(std::uint32_t ns = 0) : ns_(ns) {}

  std::uint32_t ns() const { return ns_; }
  GlobalId make(std::uint64_t seq) const { return (static_cast<GlobalId>(ns_) << kSeqBits) | seq; }

  /// First id of a fresh block of n consecutive vertex (tet) ids.
  GlobalId lease_vertices(std::uint64_t n) { return make(vertex_seq_.fetch_add(n)); }
  GlobalId lease_tets(std::uint64_t n) { return make(tet_seq_.fetch_add(n)); }

  /// Moves the counters beyond any id of this namespace already in use.
  void observe_vertex(GlobalId gid);
  void observe_tet(GlobalId gid);

  std::uint64_t vertex_seq() const { return vertex_seq_.load(); }
  std::uint64_t tet_seq() const { return tet_seq_.load(); }

 private:
  std::uint32_t ns_;
  std::atomic<std::uint64_t> vertex_seq_{0};
  std::atomic<std::uint64_t> tet_seq_{0};
};

/// Hands out consecutive gids from leased blocks. One per thread.
class IdLease {
 public:
  static constexpr std::uint64_t kBlock = 256;

  explicit IdLease(GidSpace& space) : space_(&space) {}

  GlobalId vertex() {
    if (v_next_ == v_end_) {
      v_next_ = space_->lease_vertices(kBlock);
      v_end_ = v_next_ + kBlock;
    }
    return v_next_++;
  }
  GlobalId tet() {
    if (t_next_ == t_end_) {
      t_next_ = space_->lease_tets(kBlock);
      t_end_ = t_next_ + kBlock;
    }
    return t_next_++;
  }

 private:
  GidSpace* space_;
  GlobalId v_next_ = 0, v_end_ = 0;
  GlobalId t_next_ = 0, t_end_ = 0;
};

/// Tetrahedral mesh with neighbor adjacency and stable slot ids.
///
/// Appends (vertices, fresh tet slots, free-list traffic) are thread-safe.
/// Tet contents are not synchronized here: concurrent writers must follow
/// the claim protocol of the podm layer.
class TetMesh {
 public:
  explicit TetMesh(std::shared_ptr<GidSpace> ids = std::make_shared<GidSpace>(0));
  TetMesh(TetMesh&&) noexcept;
  TetMesh& operator=(TetMesh&&) noexcept;
  TetMesh(const TetMesh&) = delete;
  TetMesh& operator=(const TetMesh&) = delete;

  /// Deep copy (slot numbering preserved).
  TetMesh clone() const;

  VertexId add_vertex(const Point3& p, GlobalId gid);
  const Point3& point(VertexId v) const { return vertices_[v].p; }
  GlobalId vertex_gid(VertexId v) const { return vertices_[v].gid; }
  std::size_t vertex_count() const { return vertex_count_.load(std::memory_order_acquire); }

  Tet& tet(TetId t) { return tets_[t]; }
  const Tet& tet(TetId t) const { return tets_[t]; }
  /// Number of tet slots ever allocated (alive or dead).
  TetId slot_count() const { return slot_count_.load(std::memory_order_acquire); }
  std::size_t alive_count() const { return static_cast<std::size_t>(alive_count_.load()); }
  void add_alive(std::int64_t delta) { alive_count_.fetch_add(delta, std::memory_order_relaxed); }

  /// Fresh slot at the end of the slot range; contents value-initialized.
  TetId push_slot();
  bool pop_free(TetId& out);
  void push_free(TetId t);

  std::array<Point3, 4> corners(TetId t) const {
    const Tet& x = tets_[t];
    return {point(x.v[0]), point(x.v[1]), point(x.v[2]), point(x.v[3])};
  }

  /// Symbolic gid of a neighbor absent from this submesh (face value kMissing).
  void set_missing_ref(TetId t, int face, GlobalId gid) { missing_refs_[key(t, face)] = gid; }
  GlobalId missing_ref(TetId t, int face) const;
  std::size_t missing_ref_count() const { return missing_refs_.size(); }

  GidSpace& ids() { return *ids_; }
  const std::shared_ptr<GidSpace>& ids_ptr() const { return ids_; }

  const Box& bounds() const { return bounds_; }
  void set_bounds(const Box& b) { bounds_ = b; }

  /// Alive tet slots in ascending slot order.
  std::vector<TetId> alive_tets() const;

 private:
  static std::uint64_t key(TetId t, int face) { return (static_cast<std::uint64_t>(t) << 2) | face; }

  std::shared_ptr<GidSpace> ids_;
  StableVector<Vertex> vertices_;
  StableVector<Tet> tets_;
  std::atomic<std::size_t> vertex_count_{0};
  std::atomic<TetId> slot_count_{0};
  std::atomic<std::int64_t> alive_count_{0};
  std::mutex free_mutex_;
  std::vector<TetId> free_;
  std::unordered_map<std::uint64_t, GlobalId> missing_refs_;
  Box bounds_{};
};

/// FNV-1a over every slot (dead ones included), vertex table and counters.
/// Equal fingerprints mean byte-identical mesh state.
std::uint64_t fingerprint(const TetMesh& mesh);

}  // namespace i2m
