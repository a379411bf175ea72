#pragma once

#include "qrfit/mesh.hpp"
#include "qrfit/sdf.hpp"

namespace qrfit {

/// Extracts the iso-level set of the grid as a welded, watertight triangle
/// mesh (tetrahedral decomposition of each cell, linear interpolation along
/// cut edges). Normals point toward positive signed distance. A grid with no
/// sign change yields an empty mesh.
TriangleMesh extract_mesh(const SDFGrid& sdf, double iso = 0.0);

}  // namespace qrfit
