#include "i2m/delaunay/tet_mesh.hpp"

#include <cstring>

#include "i2m/common/bytes.hpp"

namespace i2m {

void GidSpace::observe_vertex(GlobalId gid) {
  if ((gid >> kSeqBits) != ns_) return;
  const std::uint64_t next = (gid & ((GlobalId{1} << kSeqBits) - 1)) + 1;
  std::uint64_t cur = vertex_seq_.load();
  while (cur < next && !vertex_seq_.compare_exchange_weak(cur, next)) {
  }
}

void GidSpace::observe_tet(GlobalId gid) {
  if ((gid >> kSeqBits) != ns_) return;
  const std::uint64_t next = (gid & ((GlobalId{1} << kSeqBits) - 1)) + 1;
  std::uint64_t cur = tet_seq_.load();
  while (cur < next && !tet_seq_.compare_exchange_weak(cur, next)) {
  }
}

TetMesh::TetMesh(std::shared_ptr<GidSpace> ids) : ids_(std::move(ids)) {}

TetMesh::TetMesh(TetMesh&& o) noexcept
    : ids_(std::move(o.ids_)),
      vertices_(std::move(o.vertices_)),
      tets_(std::move(o.tets_)),
      vertex_count_(o.vertex_count_.load()),
      slot_count_(o.slot_count_.load()),
      alive_count_(o.alive_count_.load()),
      free_(std::move(o.free_)),
      missing_refs_(std::move(o.missing_refs_)),
      bounds_(o.bounds_) {
  o.vertex_count_ = 0;
  o.slot_count_ = 0;
  o.alive_count_ = 0;
}

TetMesh& TetMesh::operator=(TetMesh&& o) noexcept {
  if (this != &o) {
    ids_ = std::move(o.ids_);
    vertices_ = std::move(o.vertices_);
    tets_ = std::move(o.tets_);
    vertex_count_ = o.vertex_count_.load();
    slot_count_ = o.slot_count_.load();
    alive_count_ = o.alive_count_.load();
    free_ = std::move(o.free_);
    missing_refs_ = std::move(o.missing_refs_);
    bounds_ = o.bounds_;
    o.vertex_count_ = 0;
    o.slot_count_ = 0;
    o.alive_count_ = 0;
  }
  return *this;
}

TetMesh TetMesh::clone() const {
  TetMesh m(ids_);
  const std::size_t nv = vertex_count();
  m.vertices_.ensure(nv);
  for (std::size_t i = 0; i < nv; ++i) m.vertices_[i] = vertices_[i];
  m.vertex_count_ = nv;
  const TetId nt = slot_count();
  m.tets_.ensure(nt);
  for (TetId t = 0; t < nt; ++t) m.tets_[t] = tets_[t];
  m.slot_count_ = nt;
  m.alive_count_ = alive_count_.load();
  m.free_ = free_;
  m.missing_refs_ = missing_refs_;
  m.bounds_ = bounds_;
  return m;
}

VertexId TetMesh::add_vertex(const Point3& p, GlobalId gid) {
  const std::size_t idx = vertex_count_.fetch_add(1, std::memory_order_acq_rel);
  vertices_.ensure(idx + 1);
  vertices_[idx] = Vertex{p, gid};
  return static_cast<VertexId>(idx);
}

TetId TetMesh::push_slot() {
  const TetId idx = slot_count_.fetch_add(1, std::memory_order_acq_rel);
  if (idx >= kMissing) throw MeshError("tet slot space exhausted");
  tets_.ensure(static_cast<std::size_t>(idx) + 1);
  tets_[idx] = Tet{};
  return idx;
}

bool TetMesh::pop_free(TetId& out) {
  std::lock_guard lock(free_mutex_);
  if (free_.empty()) return false;
  out = free_.back();
  free_.pop_back();
  return true;
}

void TetMesh::push_free(TetId t) {
  std::lock_guard lock(free_mutex_);
  free_.push_back(t);
}

GlobalId TetMesh::missing_ref(TetId t, int face) const {
  auto it = missing_refs_.find(key(t, face));
  return it == missing_refs_.end() ? ~GlobalId{0} : it->second;
}

std::vector<TetId> TetMesh::alive_tets() const {
  std::vector<TetId> out;
  out.reserve(alive_count());
  const TetId n = slot_count();
  for (TetId t = 0; t < n; ++t) {
    if (tets_[t].alive) out.push_back(t);
  }
  return out;
}

std::uint64_t fingerprint(const TetMesh& mesh) {
  ByteWriter w;
  const TetId nt = mesh.slot_count();
  const std::size_t nv = mesh.vertex_count();
  w.reserve(nt * 48 + nv * 32 + 32);
  w.u64(nv);
  w.u64(nt);
  w.u64(mesh.alive_count());
  for (std::size_t v = 0; v < nv; ++v) {
    const Point3& p = mesh.point(static_cast<VertexId>(v));
    w.f64(p.x);
    w.f64(p.y);
    w.f64(p.z);
    w.u64(mesh.vertex_gid(static_cast<VertexId>(v)));
  }
  for (TetId t = 0; t < nt; ++t) {
    const Tet& x = mesh.tet(t);
    for (auto v : x.v) w.u32(v);
    for (auto n : x.n) w.u32(n);
    w.u64(x.gid);
    w.i32(x.owner);
    w.u8(x.alive ? 1 : 0);
  }
  return fnv1a64(w.buffer());
}

}  // namespace i2m
