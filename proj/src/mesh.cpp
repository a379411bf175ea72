#include "qrfit/mesh.hpp"

#include "qrfit/error.hpp"
#include "qrfit/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace qrfit {

void TriangleMesh::validate() const {
    const int nv = static_cast<int>(vertices.size());
    for (const Vec3& v : vertices) {
        if (!finite(v)) throw InvariantError("mesh vertex with non-finite coordinates");
    }
    for (size_t f = 0; f < faces.size(); ++f) {
        const auto& [a, b, c] = faces[f];
        if (a < 0 || b < 0 || c < 0 || a >= nv || b >= nv || c >= nv)
            throw InvariantError("face " + std::to_string(f) + " references vertex index out of range");
        if (a == b || b == c || a == c)
            throw InvariantError("face " + std::to_string(f) + " repeats a vertex index");
    }
    if (!colors.empty() && colors.size() != vertices.size())
        throw InvariantError("per-vertex color count does not match vertex count");
}

Aabb TriangleMesh::bounds() const {
    Aabb box;
    for (const Vec3& v : vertices) box.expand(v);
    return box;
}

double TriangleMesh::face_area(int f) const {
    const auto& [a, b, c] = faces[f];
    return 0.5 * norm(cross(vertices[b] - vertices[a], vertices[c] - vertices[a]));
}

double TriangleMesh::total_area() const {
    double area = 0.0;
    for (size_t f = 0; f < faces.size(); ++f) area += face_area(static_cast<int>(f));
    return area;
}

Aabb PointCloud::bounds() const {
    Aabb box;
    for (const Vec3& p : points) box.expand(p);
    return box;
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

TriangleMesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open mesh file: " + path);

    TriangleMesh mesh;
    bool saw_plain_vertex = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;  // blank line
        if (tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x >> p.y >> p.z)) parse_fail(path, lineno, "vertex needs 3 coordinates");
            Vec3 col;
            if (ss >> col.x) {
                if (!(ss >> col.y >> col.z)) parse_fail(path, lineno, "vertex color needs 3 components");
                if (!mesh.colors.empty() || !saw_plain_vertex) {
                    mesh.colors.push_back(col);
                } else {
                    parse_fail(path, lineno, "mixed colored and uncolored vertices");
                }
            } else {
                ss.clear();
                saw_plain_vertex = true;
                if (!mesh.colors.empty()) parse_fail(path, lineno, "mixed colored and uncolored vertices");
            }
            std::string rest;
            if (ss >> rest) parse_fail(path, lineno, "trailing tokens on vertex line");
            mesh.vertices.push_back(p);
        } else if (tag == "f") {
            std::array<int, 3> idx;
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                if (!(ss >> tok)) parse_fail(path, lineno, "face needs 3 vertex indices");
                if (tok.find('/') != std::string::npos)
                    parse_fail(path, lineno, "face attributes (v/vt/vn) are not supported");
                size_t pos = 0;
                int v = 0;
                try {
                    v = std::stoi(tok, &pos);
                } catch (const std::exception&) {
                    parse_fail(path, lineno, "bad face index '" + tok + "'");
                }
                if (pos != tok.size()) parse_fail(path, lineno, "bad face index '" + tok + "'");
                if (v < 1 || v > static_cast<int>(mesh.vertices.size()))
                    parse_fail(path, lineno, "face index " + std::to_string(v) + " out of range");
                idx[k] = v - 1;
            }
            std::string rest;
            if (ss >> rest) parse_fail(path, lineno, "only triangles are supported");
            mesh.faces.push_back(idx);
        } else {
            parse_fail(path, lineno, "unsupported directive '" + tag + "'");
        }
    }
    mesh.validate();
    return mesh;
}

void save_mesh(const TriangleMesh& mesh, const std::string& path) {
    mesh.validate();
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    char buf[256];
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        if (mesh.has_colors()) {
            const Vec3& c = mesh.colors[i];
            std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g %.17g %.17g %.17g\n", v.x, v.y, v.z, c.x, c.y, c.z);
        } else {
            std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
        }
        out << buf;
    }
    for (const auto& [a, b, c] : mesh.faces) {
        out << "f " << a + 1 << ' ' << b + 1 << ' ' << c + 1 << '\n';
    }
    if (!out) throw InvariantError("write failed: " + path);
}

int nearest_vertex(const TriangleMesh& mesh, const Vec3& query) {
    if (mesh.vertices.empty()) throw InvariantError("nearest_vertex on empty mesh");
    int best = 0;
    double best_d2 = norm2(mesh.vertices[0] - query);
    for (size_t i = 1; i < mesh.vertices.size(); ++i) {
        double d2 = norm2(mesh.vertices[i] - query);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return best;
}

PointCloud sample_points_uniform(const TriangleMesh& mesh, int n, std::uint64_t seed) {
    if (n < 1) throw InvariantError("sample count must be >= 1");
    const int nf = static_cast<int>(mesh.faces.size());
    std::vector<double> cumulative(nf);
    double total = 0.0;
    for (int f = 0; f < nf; ++f) {
        total += mesh.face_area(f);
        cumulative[f] = total;
    }
    if (!(total > 0.0)) throw InvariantError("mesh has zero total surface area");

    PointCloud cloud;
    cloud.seed = seed;
    cloud.points.resize(n);
    Rng rng(Rng::derive(seed, "surface-sample"));
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform() * total;
        int f = static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        if (f >= nf) f = nf - 1;
        const auto& [a, b, c] = mesh.faces[f];
        // square-root warp gives uniform density over the triangle
        double r1 = std::sqrt(rng.uniform());
        double r2 = rng.uniform();
        cloud.points[i] = (1.0 - r1) * mesh.vertices[a] + r1 * (1.0 - r2) * mesh.vertices[b] + r1 * r2 * mesh.vertices[c];
    }
    return cloud;
}

namespace {

constexpr char kCloudMagic[4] = {'P', 'C', 'D', '1'};

}  // namespace

void save_point_cloud(const PointCloud& cloud, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out.write(kCloudMagic, 4);
    std::uint32_t count = static_cast<std::uint32_t>(cloud.points.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const Vec3& p : cloud.points) {
        float xyz[3] = {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    if (!out) throw InvariantError("write failed: " + path);
}

PointCloud load_point_cloud(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open point cloud file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCloudMagic, 4) != 0)
        throw ParseError(path + ": not a PCD1 point cloud");
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    PointCloud cloud;
    cloud.points.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        float xyz[3];
        in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
        if (!in) throw ParseError(path + ": truncated point payload");
        cloud.points[i] = {xyz[0], xyz[1], xyz[2]};
        if (!finite(cloud.points[i])) throw InvariantError(path + ": non-finite point");
    }
    return cloud;
}

}  // namespace qrfit
