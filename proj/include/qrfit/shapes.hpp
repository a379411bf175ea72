#pragma once

#include "qrfit/mesh.hpp"

namespace qrfit {

/// Unit square [0,1]^2 in the z=0 plane, two triangles, diagonal (0,0)-(1,1).
TriangleMesh make_unit_square();

/// Axis-aligned box, each face an n x n grid of quads split into triangles.
TriangleMesh make_box(const Vec3& center, const Vec3& half_extents, int subdivisions = 1);

/// Cylinder around the given axis through `center`, with `radial` segments
/// around and `rings` segments along the height; capped ends.
TriangleMesh make_cylinder(const Vec3& center, const Vec3& axis, double radius, double height,
                           int radial = 32, int rings = 8);

/// Icosahedron subdivided `subdivisions` times and projected to the unit
/// sphere centered at origin. subdivisions=4 gives 2562 vertices, 5120 faces.
TriangleMesh make_icosphere(int subdivisions, double radius = 1.0);

/// Two rectangles joined at a 90-degree fold: x in [0,length_a] flat in z=0,
/// then rising in +z for length_b, both `width` wide, as a grid mesh.
/// Vertex (0,0,0) is index 0; the far corner across the fold is the last vertex.
TriangleMesh make_bent_strip(double length_a, double length_b, double width, int cells_long, int cells_wide);

/// Appends `extra` to `mesh` (no vertex welding).
void append_mesh(TriangleMesh& mesh, const TriangleMesh& extra);

}  // namespace qrfit
