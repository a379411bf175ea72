#include <doctest.h>

#include "qrfit/error.hpp"
#include "qrfit/kdtree.hpp"
#include "qrfit/mesh.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/shapes.hpp"

#include <cstdio>
#include <fstream>

using namespace qrfit;

namespace {

TriangleMesh make_unit_cube() { return make_box({0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, 1); }

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

}  // namespace

TEST_CASE("load_mesh parses the two-triangle unit square") {
    write_file("tmp_square.obj",
               "# unit square\n"
               "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
               "f 1 2 3\nf 1 3 4\n");
    TriangleMesh m = load_mesh("tmp_square.obj");
    CHECK(m.vertices.size() == 4);
    CHECK(m.faces.size() == 2);
    CHECK(m.faces[0] == std::array<int, 3>{0, 1, 2});
}

TEST_CASE("load_mesh rejects out-of-range face indices with a line number") {
    write_file("tmp_bad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 9\n");
    try {
        load_mesh("tmp_bad.obj");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":5:") != std::string::npos);
        CHECK(std::string(e.what()).find("out of range") != std::string::npos);
    }
}

TEST_CASE("icosphere subdivision 4 has the closed-form vertex and face counts") {
    TriangleMesh sphere = make_icosphere(4);
    CHECK(sphere.vertices.size() == 2562);  // 10 * 4^4 + 2
    CHECK(sphere.faces.size() == 5120);     // 20 * 4^4
    save_mesh(sphere, "tmp_icosphere.obj");
    TriangleMesh back = load_mesh("tmp_icosphere.obj");
    CHECK(back.vertices.size() == 2562);
    CHECK(back.faces.size() == 5120);
}

TEST_CASE("save/load round trip preserves faces exactly and vertices bit-for-bit") {
    TriangleMesh cube = make_unit_cube();
    save_mesh(cube, "tmp_cube.obj");
    TriangleMesh back = load_mesh("tmp_cube.obj");
    REQUIRE(back.faces.size() == cube.faces.size());
    CHECK(back.faces == cube.faces);
    for (size_t i = 0; i < cube.vertices.size(); ++i) {
        CHECK(back.vertices[i].x == cube.vertices[i].x);
        CHECK(back.vertices[i].y == cube.vertices[i].y);
        CHECK(back.vertices[i].z == cube.vertices[i].z);
    }
}

TEST_CASE("save_mesh writes per-vertex colors and loads them back") {
    TriangleMesh m = make_unit_square();
    m.colors = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.5, 0.5, 0.5}};
    save_mesh(m, "tmp_colored.obj");
    std::ifstream in("tmp_colored.obj");
    std::string first_line;
    std::getline(in, first_line);
    CHECK(first_line.substr(0, 8) == "v 0 0 0 ");
    TriangleMesh back = load_mesh("tmp_colored.obj");
    REQUIRE(back.has_colors());
    CHECK(back.colors[2].z == 1.0);
}

TEST_CASE("empty mesh round trips through an empty file") {
    TriangleMesh empty;
    save_mesh(empty, "tmp_empty.obj");
    TriangleMesh back = load_mesh("tmp_empty.obj");
    CHECK(back.vertices.empty());
    CHECK(back.faces.empty());
}

TEST_CASE("nearest_vertex picks the closest corner and breaks ties low") {
    TriangleMesh cube = make_unit_cube();
    int idx = nearest_vertex(cube, {0.9, 0.9, 0.9});
    CHECK(norm(cube.vertices[idx] - Vec3{1, 1, 1}) == 0.0);
    CHECK(nearest_vertex(cube, cube.vertices[3]) == 3);

    TriangleMesh pair;
    pair.vertices = {{5, 0, 0}, {5, 0, 0}, {0, 0, 0}, {5, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    pair.faces = {};
    CHECK(nearest_vertex(pair, {0.1, 0, 0}) == 2);  // ties with 4 and 5
    CHECK_THROWS_AS(nearest_vertex(TriangleMesh{}, {0, 0, 0}), InvariantError);
}

TEST_CASE("kd-tree nearest agrees with brute force including tie-breaks") {
    Rng rng(17);
    std::vector<Vec3> pts(400);
    for (Vec3& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    // inject exact duplicates to exercise the tie rule
    pts[100] = pts[7];
    pts[399] = pts[7];
    KdTree tree(pts);
    TriangleMesh as_mesh;
    as_mesh.vertices = pts;
    for (int i = 0; i < 200; ++i) {
        Vec3 q = i % 5 == 0 ? pts[rng.uniform_index(pts.size())]
                            : Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        CHECK(tree.nearest(q) == nearest_vertex(as_mesh, q));
    }
}

TEST_CASE("surface sampling lands on the mesh and is deterministic") {
    TriangleMesh sphere = make_icosphere(3);
    PointCloud a = sample_points_uniform(sphere, 2000, 42);
    PointCloud b = sample_points_uniform(sphere, 2000, 42);
    REQUIRE(a.points.size() == 2000);
    for (size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
        CHECK(a.points[i].z == b.points[i].z);
    }
    for (const Vec3& p : a.points) CHECK(std::abs(norm(p) - 1.0) < 0.01);  // chordal sag at subdiv 3

    PointCloud c = sample_points_uniform(sphere, 2000, 43);
    bool any_differ = false;
    for (size_t i = 0; i < c.points.size(); ++i)
        if (c.points[i].x != a.points[i].x) any_differ = true;
    CHECK(any_differ);
}

TEST_CASE("sampling is area weighted (binomial check on a 100:1 pair of faces)") {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {20, 0, 0}, {0, 10, 0},   // area 100
                  {100, 0, 0}, {102, 0, 0}, {100, 1, 0}};  // area 1
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    PointCloud cloud = sample_points_uniform(m, 10100, 7);
    int on_large = 0;
    for (const Vec3& p : cloud.points)
        if (p.x < 50) ++on_large;
    // expectation 10000, sigma = sqrt(10100 * (100/101) * (1/101)) ~ 9.95
    CHECK(on_large > 10000 - 30);
    CHECK(on_large < 10000 + 30);
}

TEST_CASE("degenerate faces are never sampled and zero-area meshes error") {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};  // second face is collinear
    PointCloud cloud = sample_points_uniform(m, 500, 3);
    for (const Vec3& p : cloud.points) CHECK(p.x <= 1.0001);

    TriangleMesh flat;
    flat.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    flat.faces = {{0, 1, 2}};
    CHECK_THROWS_AS(sample_points_uniform(flat, 10, 1), InvariantError);
}

TEST_CASE("PCD1 point cloud files round trip") {
    PointCloud cloud;
    cloud.points = {{0.5, -1.25, 3e5}, {0, 0, 0}, {-2, 7, 0.125}};
    save_point_cloud(cloud, "tmp_cloud.pcd");
    PointCloud back = load_point_cloud("tmp_cloud.pcd");
    REQUIRE(back.points.size() == 3);
    CHECK(back.points[0].y == -1.25);
    CHECK(back.points[2].z == 0.125);

    write_file("tmp_notcloud.pcd", "garbage");
    CHECK_THROWS_AS(load_point_cloud("tmp_notcloud.pcd"), ParseError);
}

TEST_CASE("validate rejects repeated indices in a face") {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 1}};
    CHECK_THROWS_AS(m.validate(), InvariantError);
}
