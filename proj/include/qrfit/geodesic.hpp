#pragma once

#include "qrfit/mesh.hpp"

#include <vector>

namespace qrfit {

/// Exact polyhedral geodesic distances by continuous-Dijkstra window
/// propagation over mesh edges. Construction builds connectivity once;
/// solves are const and may run concurrently on the same instance.
class GeodesicSolver {
public:
    explicit GeodesicSolver(const TriangleMesh& mesh);

    /// Distances from `source` to every vertex; unreachable vertices get +inf.
    std::vector<double> distances_from(int source) const;

    int vertex_count() const { return static_cast<int>(positions_.size()); }

    /// True when a and b can be joined by a surface path.
    bool connected(int a, int b) const { return component_[a] >= 0 && component_[a] == component_[b]; }

private:
    struct EdgeRec {
        int v0, v1;          // canonical orientation, v0 < v1
        double len;
        int face[2] = {-1, -1};
        int opposite[2] = {-1, -1};  // vertex of face[k] across this edge
    };

    std::vector<Vec3> positions_;
    std::vector<EdgeRec> edges_;
    std::vector<std::array<int, 3>> face_edges_;
    std::vector<std::vector<int>> vertex_edges_;
    std::vector<std::vector<int>> vertex_faces_;
    std::vector<char> emits_pseudosource_;  // saddle, flat, boundary, or pinch vertices
    std::vector<int> component_;
    double scale_ = 1.0;
};

/// Spec operation: distances from `source` to each target along the surface.
/// Throws InvariantError when a target cannot be reached.
std::vector<double> geodesic_distance(const TriangleMesh& mesh, int source, const std::vector<int>& targets);

/// Upper-bound oracle: Dijkstra over the graph of vertices plus edge
/// midpoints, fully connected within each face. Never below the exact value.
std::vector<double> geodesic_dijkstra_upper_bound(const TriangleMesh& mesh, int source);

}  // namespace qrfit
