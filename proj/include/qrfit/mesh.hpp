#pragma once

#include "qrfit/geom.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace qrfit {

/// Triangle surface mesh. Faces are triples of 0-based vertex indices.
/// Colors, when present, are one RGB triple in [0,1]^3 per vertex.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Vec3> colors;

    bool has_colors() const { return !colors.empty(); }
    bool empty() const { return vertices.empty(); }

    /// Throws InvariantError on out-of-range indices, repeated indices in a
    /// face, non-finite coordinates, or a color array of the wrong size.
    void validate() const;

    Aabb bounds() const;
    double face_area(int f) const;
    double total_area() const;
};

struct PointCloud {
    std::vector<Vec3> points;
    std::uint64_t seed = 0;

    bool empty() const { return points.empty(); }
    Aabb bounds() const;
};

/// Reads the ASCII OBJ subset: `v x y z [r g b]` and `f i j k` (1-based,
/// triangles only), plus comments and blank lines. Anything else is a parse
/// error reported with its line number.
TriangleMesh load_mesh(const std::string& path);

/// Writes the same OBJ subset. Full-precision floats, so load(save(m))
/// reproduces vertices exactly and faces verbatim.
void save_mesh(const TriangleMesh& mesh, const std::string& path);

/// Index of the vertex closest to `query`; ties break to the smallest index.
int nearest_vertex(const TriangleMesh& mesh, const Vec3& query);

/// Area-weighted uniform surface sampling, deterministic in `seed`.
/// Zero-area (degenerate) faces are never sampled.
PointCloud sample_points_uniform(const TriangleMesh& mesh, int n, std::uint64_t seed);

/// Binary point-cloud interchange: magic "PCD1", u32 count, then
/// count x 3 little-endian float32.
void save_point_cloud(const PointCloud& cloud, const std::string& path);
PointCloud load_point_cloud(const std::string& path);

}  // namespace qrfit
