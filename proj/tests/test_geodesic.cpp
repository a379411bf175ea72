#include <doctest.h>

#include "qrfit/error.hpp"
#include "qrfit/geodesic.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/shapes.hpp"

using namespace qrfit;

TEST_CASE("flat square: corner-to-corner geodesic is sqrt(2) along the diagonal edge") {
    TriangleMesh m = make_unit_square();
    auto d = geodesic_distance(m, 0, {2, 0, 1});
    CHECK(d[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
    CHECK(d[1] == 0.0);
    CHECK(d[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("flat square split on the other diagonal still gives sqrt(2) across the interior") {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 3}, {1, 2, 3}};  // diagonal 1-3; 0 and 2 are not adjacent
    auto d = geodesic_distance(m, 0, {2});
    CHECK(d[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("bent strip geodesic equals the unfolded straight line") {
    double a = 1.0, b = 0.7, w = 0.4;
    TriangleMesh strip = make_bent_strip(a, b, w, 17, 3);
    int last = static_cast<int>(strip.vertices.size()) - 1;
    auto d = geodesic_distance(strip, 0, {last});
    CHECK(d[0] == doctest::Approx(std::hypot(a + b, w)).epsilon(1e-9));
}

TEST_CASE("icosphere antipodal geodesic approaches pi") {
    TriangleMesh sphere = make_icosphere(4);
    // the construction is centrally symmetric, so -v0 is a vertex
    Vec3 target = -sphere.vertices[0];
    int anti = 0;
    double best = 1e30;
    for (size_t i = 0; i < sphere.vertices.size(); ++i) {
        double d2 = norm2(sphere.vertices[i] - target);
        if (d2 < best) {
            best = d2;
            anti = static_cast<int>(i);
        }
    }
    REQUIRE(best < 1e-20);
    auto d = geodesic_distance(sphere, 0, {anti});
    CHECK(d[0] == doctest::Approx(M_PI).epsilon(0.03));
}

TEST_CASE("geodesics are symmetric, bounded below by chords, and within the Dijkstra oracle") {
    TriangleMesh sphere = make_icosphere(2);
    GeodesicSolver solver(sphere);
    Rng rng(101);
    const int nv = static_cast<int>(sphere.vertices.size());
    for (int trial = 0; trial < 12; ++trial) {
        int a = static_cast<int>(rng.uniform_index(nv));
        int b = static_cast<int>(rng.uniform_index(nv));
        auto da = solver.distances_from(a);
        auto db = solver.distances_from(b);
        CHECK(da[b] == doctest::Approx(db[a]).epsilon(1e-9));
        CHECK(da[b] >= norm(sphere.vertices[a] - sphere.vertices[b]) - 1e-9);
        auto oracle = geodesic_dijkstra_upper_bound(sphere, a);
        CHECK(da[b] <= oracle[b] + 1e-9);
    }
}

TEST_CASE("geodesic triangle inequality holds on random triples") {
    TriangleMesh sphere = make_icosphere(2);
    GeodesicSolver solver(sphere);
    const int nv = static_cast<int>(sphere.vertices.size());
    Rng rng(77);
    std::vector<int> sources;
    std::vector<std::vector<double>> fields;
    for (int i = 0; i < 8; ++i) {
        int s = static_cast<int>(rng.uniform_index(nv));
        sources.push_back(s);
        fields.push_back(solver.distances_from(s));
    }
    int checked = 0;
    for (int t = 0; t < 100; ++t) {
        int ia = static_cast<int>(rng.uniform_index(sources.size()));
        int ib = static_cast<int>(rng.uniform_index(sources.size()));
        int c = static_cast<int>(rng.uniform_index(nv));
        double ab = fields[ia][sources[ib]];
        double ac = fields[ia][c];
        double bc = fields[ib][c];
        CHECK(ac <= ab + bc + 1e-6);
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("disconnected components raise an error") {
    TriangleMesh two = make_unit_square();
    TriangleMesh far = make_unit_square();
    for (Vec3& v : far.vertices) v += Vec3{10, 0, 0};
    append_mesh(two, far);
    CHECK_THROWS_AS(geodesic_distance(two, 0, {5}), InvariantError);
    CHECK_NOTHROW(geodesic_distance(two, 4, {6}));  // within the second square
}

TEST_CASE("distance to self is zero and targets validate") {
    TriangleMesh m = make_unit_square();
    CHECK(geodesic_distance(m, 1, {1})[0] == 0.0);
    CHECK_THROWS_AS(geodesic_distance(m, 0, {9}), InvariantError);
    CHECK_THROWS_AS(geodesic_distance(m, -1, {0}), InvariantError);
}
