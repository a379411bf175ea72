#include "qrfit/shapes.hpp"

#include "qrfit/error.hpp"

#include <cmath>
#include <map>

namespace qrfit {

TriangleMesh make_unit_square() {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

namespace {

// Builds one box face as a grid and appends it. `origin` is the face corner,
// `du`/`dv` span the face, n is the grid resolution.
void add_grid_face(TriangleMesh& m, const Vec3& origin, const Vec3& du, const Vec3& dv, int n) {
    int base = static_cast<int>(m.vertices.size());
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            m.vertices.push_back(origin + (static_cast<double>(i) / n) * du + (static_cast<double>(j) / n) * dv);
    auto vid = [&](int i, int j) { return base + j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            m.faces.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            m.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
}

}  // namespace

TriangleMesh make_box(const Vec3& center, const Vec3& he, int subdivisions) {
    if (subdivisions < 1) throw InvariantError("box subdivisions must be >= 1");
    TriangleMesh m;
    const Vec3 c = center;
    // each face wound so normals point outward
    add_grid_face(m, c + Vec3{-he.x, -he.y, he.z}, {2 * he.x, 0, 0}, {0, 2 * he.y, 0}, subdivisions);    // +z
    add_grid_face(m, c + Vec3{-he.x, he.y, -he.z}, {2 * he.x, 0, 0}, {0, -2 * he.y, 0}, subdivisions);   // -z
    add_grid_face(m, c + Vec3{he.x, -he.y, -he.z}, {0, 2 * he.y, 0}, {0, 0, 2 * he.z}, subdivisions);    // +x
    add_grid_face(m, c + Vec3{-he.x, -he.y, he.z}, {0, 2 * he.y, 0}, {0, 0, -2 * he.z}, subdivisions);   // -x
    add_grid_face(m, c + Vec3{-he.x, he.y, -he.z}, {0, 0, 2 * he.z}, {2 * he.x, 0, 0}, subdivisions);    // +y
    add_grid_face(m, c + Vec3{-he.x, -he.y, -he.z}, {2 * he.x, 0, 0}, {0, 0, 2 * he.z}, subdivisions);   // -y
    return m;
}

TriangleMesh make_cylinder(const Vec3& center, const Vec3& axis, double radius, double height,
                           int radial, int rings) {
    if (radial < 3 || rings < 1) throw InvariantError("cylinder needs radial >= 3 and rings >= 1");
    Vec3 w = normalized(axis);
    // orthonormal frame around the axis
    Vec3 u = std::abs(w.x) < 0.9 ? cross(w, Vec3{1, 0, 0}) : cross(w, Vec3{0, 1, 0});
    u = normalized(u);
    Vec3 v = cross(w, u);

    TriangleMesh m;
    for (int r = 0; r <= rings; ++r) {
        double h = (static_cast<double>(r) / rings - 0.5) * height;
        for (int s = 0; s < radial; ++s) {
            double ang = 2.0 * M_PI * s / radial;
            m.vertices.push_back(center + h * w + radius * (std::cos(ang) * u + std::sin(ang) * v));
        }
    }
    auto vid = [&](int r, int s) { return r * radial + (s % radial); };
    for (int r = 0; r < rings; ++r)
        for (int s = 0; s < radial; ++s) {
            m.faces.push_back({vid(r, s), vid(r, s + 1), vid(r + 1, s + 1)});
            m.faces.push_back({vid(r, s), vid(r + 1, s + 1), vid(r + 1, s)});
        }
    int bottom = static_cast<int>(m.vertices.size());
    m.vertices.push_back(center - 0.5 * height * w);
    int top = static_cast<int>(m.vertices.size());
    m.vertices.push_back(center + 0.5 * height * w);
    for (int s = 0; s < radial; ++s) {
        m.faces.push_back({bottom, vid(0, s + 1), vid(0, s)});
        m.faces.push_back({top, vid(rings, s), vid(rings, s + 1)});
    }
    return m;
}

TriangleMesh make_icosphere(int subdivisions, double radius) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    TriangleMesh m;
    m.vertices = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    m.faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            int id = static_cast<int>(m.vertices.size());
            m.vertices.push_back(0.5 * (m.vertices[a] + m.vertices[b]));
            midpoint[key] = id;
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.faces.size() * 4);
        for (const auto& [a, b, c] : m.faces) {
            int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
            next.push_back({a, ab, ca});
            next.push_back({b, bc, ab});
            next.push_back({c, ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.faces = std::move(next);
    }
    for (Vec3& v : m.vertices) v = radius * normalized(v);
    return m;
}

TriangleMesh make_bent_strip(double length_a, double length_b, double width, int cells_long, int cells_wide) {
    if (cells_long < 2 || cells_wide < 1) throw InvariantError("bent strip needs cells_long >= 2 and cells_wide >= 1");
    // split the long cells between the two legs proportionally, at least one each
    int cells_a = std::max(1, static_cast<int>(std::round(cells_long * length_a / (length_a + length_b))));
    cells_a = std::min(cells_a, cells_long - 1);
    int cells_b = cells_long - cells_a;

    TriangleMesh m;
    auto place = [&](double s, double y) -> Vec3 {
        // arc-length s along the unfolded strip; fold at s = length_a
        if (s <= length_a) return {s, y, 0};
        return {length_a, y, s - length_a};
    };
    std::vector<double> stations;
    for (int i = 0; i <= cells_a; ++i) stations.push_back(length_a * i / cells_a);
    for (int i = 1; i <= cells_b; ++i) stations.push_back(length_a + length_b * i / cells_b);
    int ncols = static_cast<int>(stations.size());
    for (int j = 0; j <= cells_wide; ++j)
        for (int i = 0; i < ncols; ++i)
            m.vertices.push_back(place(stations[i], width * j / cells_wide));
    auto vid = [&](int i, int j) { return j * ncols + i; };
    for (int j = 0; j < cells_wide; ++j)
        for (int i = 0; i + 1 < ncols; ++i) {
            m.faces.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            m.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    return m;
}

void append_mesh(TriangleMesh& mesh, const TriangleMesh& extra) {
    int base = static_cast<int>(mesh.vertices.size());
    mesh.vertices.insert(mesh.vertices.end(), extra.vertices.begin(), extra.vertices.end());
    for (const auto& [a, b, c] : extra.faces) mesh.faces.push_back({a + base, b + base, c + base});
}

}  // namespace qrfit
