#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/geom/point.hpp"

namespace i2m {

/// Neighbor reference on the hull.
inline constexpr GlobalId kRefBoundary = ~GlobalId{0};
/// Neighbor absent from the source submesh with no known id.
inline constexpr GlobalId kRefUnknown = ~GlobalId{0} - 1;

inline constexpr std::uint8_t kPackVersion = 1;

struct VertexRecord {
  GlobalId gid = 0;
  Point3 p;
  friend bool operator==(const VertexRecord&, const VertexRecord&) = default;
};

struct TetRecord {
  GlobalId gid = 0;
  std::array<GlobalId, 4> v{};  // vertex gids, positive orientation
  std::array<GlobalId, 4> n{};  // neighbor tet gids, kRefBoundary or kRefUnknown
  LeafId owner = 0;
  friend bool operator==(const TetRecord&, const TetRecord&) = default;
};

/// Submesh in canonical form: leaves, vertices and tets each ascending.
/// Every vertex a tet references is present.
struct SubmeshPack {
  std::vector<LeafId> leaves;
  std::vector<VertexRecord> vertices;
  std::vector<TetRecord> tets;

  bool empty() const { return tets.empty(); }
  friend bool operator==(const SubmeshPack&, const SubmeshPack&) = default;
};

/// Records of the alive tets owned by `leaves` (all tets if `leaves` is
/// empty), in canonical order. Work is split by slot range across nthreads.
SubmeshPack extract(const TetMesh& mesh, std::span<const LeafId> leaves, int nthreads = 1);

/// Splits a mesh into one canonical pack per owner leaf present.
std::vector<SubmeshPack> extract_by_leaf(const TetMesh& mesh, int nthreads = 1);

/// Union of packs (duplicate vertices collapse; duplicate tets are an error),
/// canonicalized.
SubmeshPack merge(std::span<const SubmeshPack> packs);

/// Wire bytes. The output does not depend on nthreads.
std::vector<std::uint8_t> encode(const SubmeshPack& pack, int nthreads = 1);
/// Throws ProtocolError on bad magic, version mismatch, truncation or a
/// header that disagrees with the payload.
SubmeshPack decode(std::span<const std::uint8_t> bytes, int nthreads = 1);

/// Mesh from packs. Vertices and tets take slots in ascending gid order.
/// Adjacency is rebuilt by matching facets on vertex gids; an unmatched
/// facet becomes kBoundary if the record says so, otherwise kMissing with
/// the recorded gid kept as its missing reference.
TetMesh build_mesh(std::span<const SubmeshPack> packs, std::shared_ptr<GidSpace> ids, const Box& bounds);

inline std::vector<std::uint8_t> pack(const TetMesh& mesh, std::span<const LeafId> leaves, int nthreads = 1) {
  return encode(extract(mesh, leaves, nthreads), nthreads);
}
TetMesh unpack(std::span<const std::uint8_t> bytes, std::shared_ptr<GidSpace> ids, const Box& bounds);

/// Mesh dump file: a pack covering every leaf plus the domain box.
void write_mesh_dump(const TetMesh& mesh, const std::string& path);
TetMesh read_mesh_dump(const std::string& path);

}  // namespace i2m
