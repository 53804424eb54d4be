#pragma once

#include <string>
#include <vector>

#include "i2m/delaunay/refine.hpp"
#include "i2m/delaunay/tet_mesh.hpp"

namespace i2m {

struct DelaunayViolation {
  TetId tet = 0;
  VertexId vertex = 0;  // strictly inside the tet's circumsphere
};

struct AdjacencyIssue {
  TetId tet = 0;
  int face = -1;  // -1: the tet as a whole
  std::string what;
};

/// Every (alive tet, vertex) pair with the vertex strictly inside the
/// circumsphere, decided by the exact unperturbed predicate. A conservative
/// floating-point prefilter skips pairs that are clearly outside.
std::vector<DelaunayViolation> audit_delaunay(const TetMesh& mesh);

/// Orientation, neighbor symmetry, facet sharing and hull checks. kMissing
/// neighbors are reported unless allow_missing is set.
std::vector<AdjacencyIssue> audit_adjacency(const TetMesh& mesh, bool allow_missing = false);

/// Order-independent hash of the alive tets as sets of vertex coordinates.
/// Equal for meshes with the same triangulation regardless of slot or id layout.
std::uint64_t geometric_signature(const TetMesh& mesh);

/// All alive tets the oracle considers bad.
std::vector<TetId> scan_bad(const TetMesh& mesh, const BadnessOracle& oracle);

}  // namespace i2m
