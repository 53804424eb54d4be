#pragma once

#include <memory>
#include <vector>

#include "i2m/delaunay/kernel.hpp"
#include "i2m/delaunay/tet_mesh.hpp"
#include "i2m/image/labeled_image.hpp"

namespace i2m {

/// Relative duplicate-point tolerance (times the bounding-box diagonal).
inline constexpr double kDuplicateTolerance = 1e-12;

/// Delaunay mesh of a box: its 8 corners, triangulated into the tets whose
/// (perturbed) circumspheres are empty. Throws MeshError for a flat box.
TetMesh bootstrap_box(const Box& box, std::shared_ptr<GidSpace> ids = std::make_shared<GidSpace>(0));

/// bootstrap_box over the image bounds.
TetMesh bootstrap(const LabeledImage& img, std::shared_ptr<GidSpace> ids = std::make_shared<GidSpace>(0));

/// Alive tet containing p, walking from `hint`. When p lies on a shared
/// face, edge or vertex the lowest containing tet id is returned.
/// Throws MeshError if p is outside the hull (or leaves the submesh).
TetId locate(const TetMesh& mesh, const Point3& p, TetId hint);

/// Non-throwing walk; nullopt when the walk leaves the mesh.
std::optional<TetId> try_locate(const TetMesh& mesh, const Point3& p, TetId hint);

/// Cavity of p grown from `start` (a tet containing p, or any tet whose
/// circumsphere contains p). Throws DuplicatePointError if p coincides with
/// a vertex of start, MeshError if growth needs absent tets.
Cavity compute_cavity(const TetMesh& mesh, const Point3& p, TetId start);

/// Inserts p by retriangulating its cavity; returns the new tet ids.
/// Throws DuplicatePointError (mesh unchanged) if p is within the duplicate
/// tolerance of an existing vertex, MeshError for an invalid cavity.
std::vector<TetId> insert(TetMesh& mesh, const Point3& p, const Cavity& cavity);

/// locate + compute_cavity + insert.
std::vector<TetId> insert_point(TetMesh& mesh, const Point3& p, TetId hint = 0);

}  // namespace i2m
