#include "qrfit/march.hpp"

#include <array>
#include <cstdint>
#include <unordered_map>

namespace qrfit {

namespace {

// Freudenthal split: six tetrahedra around the cube's main diagonal, one per
// axis permutation. Consistent across neighboring cells, so shared faces get
// matching surface cuts.
constexpr int kAxisPerms[6][3] = {
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
};

struct EdgeKey {
    std::int64_t a, b;
    bool operator==(const EdgeKey& o) const { return a == o.a && b == o.b; }
};

struct EdgeKeyHash {
    size_t operator()(const EdgeKey& k) const {
        return std::hash<std::int64_t>()(k.a * 0x9e3779b97f4a7c15ll ^ k.b);
    }
};

}  // namespace

TriangleMesh extract_mesh(const SDFGrid& sdf, double iso) {
    sdf.validate();
    TriangleMesh mesh;
    std::unordered_map<EdgeKey, int, EdgeKeyHash> cut_vertex;

    auto node_id = [&](int i, int j, int k) -> std::int64_t {
        return (static_cast<std::int64_t>(k) * sdf.ny + j) * sdf.nx + i;
    };

    // interpolated surface point on the edge between two lattice nodes,
    // keyed by the ordered node pair so shared edges weld exactly
    auto cut_point = [&](std::int64_t na, std::int64_t nb, const Vec3& pa, const Vec3& pb, double va,
                         double vb) -> int {
        EdgeKey key{std::min(na, nb), std::max(na, nb)};
        auto it = cut_vertex.find(key);
        if (it != cut_vertex.end()) return it->second;
        // evaluate with the lower node first for bitwise determinism
        Vec3 lo_p = na < nb ? pa : pb;
        Vec3 hi_p = na < nb ? pb : pa;
        double lo_v = na < nb ? va : vb;
        double hi_v = na < nb ? vb : va;
        double t = (iso - lo_v) / (hi_v - lo_v);
        int id = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(lo_p + t * (hi_p - lo_p));
        cut_vertex.emplace(key, id);
        return id;
    };

    auto add_triangle = [&](int v0, int v1, int v2, const Vec3& toward_outside) {
        if (v0 == v1 || v1 == v2 || v0 == v2) return;
        Vec3 n = cross(mesh.vertices[v1] - mesh.vertices[v0], mesh.vertices[v2] - mesh.vertices[v0]);
        if (dot(n, toward_outside) < 0.0)
            mesh.faces.push_back({v0, v2, v1});
        else
            mesh.faces.push_back({v0, v1, v2});
    };

    for (int k = 0; k + 1 < sdf.nz; ++k)
        for (int j = 0; j + 1 < sdf.ny; ++j)
            for (int i = 0; i + 1 < sdf.nx; ++i) {
                // cube corner data
                double corner_v[2][2][2];
                Vec3 corner_p[2][2][2];
                std::int64_t corner_n[2][2][2];
                bool any_neg = false, any_pos = false;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            double v = sdf.values[sdf.node_index(i + dx, j + dy, k + dz)];
                            corner_v[dx][dy][dz] = v;
                            corner_p[dx][dy][dz] = sdf.node_position(i + dx, j + dy, k + dz);
                            corner_n[dx][dy][dz] = node_id(i + dx, j + dy, k + dz);
                            (v < iso ? any_neg : any_pos) = true;
                        }
                if (!any_neg || !any_pos) continue;

                for (const auto& perm : kAxisPerms) {
                    int off[4][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {1, 1, 1}};
                    off[1][perm[0]] = 1;
                    off[2][perm[0]] = 1;
                    off[2][perm[1]] = 1;

                    double tv[4];
                    Vec3 tp[4];
                    std::int64_t tn[4];
                    for (int c = 0; c < 4; ++c) {
                        tv[c] = corner_v[off[c][0]][off[c][1]][off[c][2]];
                        tp[c] = corner_p[off[c][0]][off[c][1]][off[c][2]];
                        tn[c] = corner_n[off[c][0]][off[c][1]][off[c][2]];
                    }

                    int inside[4], outside[4], ni = 0, no = 0;
                    for (int c = 0; c < 4; ++c) {
                        if (tv[c] < iso) inside[ni++] = c;
                        else outside[no++] = c;
                    }
                    if (ni == 0 || ni == 4) continue;

                    Vec3 in_centroid{0, 0, 0}, out_centroid{0, 0, 0};
                    for (int c = 0; c < ni; ++c) in_centroid += tp[inside[c]];
                    for (int c = 0; c < no; ++c) out_centroid += tp[outside[c]];
                    Vec3 toward_outside = out_centroid / no - in_centroid / ni;

                    auto cut = [&](int a, int b) { return cut_point(tn[a], tn[b], tp[a], tp[b], tv[a], tv[b]); };

                    if (ni == 1) {
                        int a = inside[0];
                        add_triangle(cut(a, outside[0]), cut(a, outside[1]), cut(a, outside[2]), toward_outside);
                    } else if (ni == 3) {
                        int d = outside[0];
                        add_triangle(cut(d, inside[0]), cut(d, inside[1]), cut(d, inside[2]), toward_outside);
                    } else {
                        int a = inside[0], b = inside[1], c = outside[0], d = outside[1];
                        int ac = cut(a, c), ad = cut(a, d), bd = cut(b, d), bc = cut(b, c);
                        add_triangle(ac, ad, bd, toward_outside);
                        add_triangle(ac, bd, bc, toward_outside);
                    }
                }
            }
    return mesh;
}

}  // namespace qrfit
