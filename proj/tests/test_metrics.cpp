#include <doctest.h>

#include "qrfit/metrics.hpp"
#include "qrfit/rng.hpp"
#include "qrfit/shapes.hpp"

#include <fstream>
#include <sstream>

using namespace qrfit;

namespace {

PointCloud random_cloud(Rng& rng, int n, double spread = 1.0) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread)});
    return c;
}

}  // namespace

TEST_CASE("chamfer: coincident clouds, singleton pair, symmetry") {
    Rng rng(3);
    PointCloud a = random_cloud(rng, 50);
    CHECK(chamfer(a, a) == 0.0);

    PointCloud p, q;
    p.points = {{0, 0, 0}};
    q.points = {{1, 0, 0}};
    CHECK(chamfer(p, q) == doctest::Approx(2.0));

    PointCloud b = random_cloud(rng, 70);
    CHECK(chamfer(a, b) == chamfer(b, a));
}

TEST_CASE("accelerated chamfer equals the brute-force oracle exactly") {
    Rng rng(9);
    for (int trial = 0; trial < 8; ++trial) {
        PointCloud a = random_cloud(rng, 100 + static_cast<int>(rng.uniform_index(400)));
        PointCloud b = random_cloud(rng, 100 + static_cast<int>(rng.uniform_index(400)));
        CHECK(chamfer(a, b) == chamfer_serial(a, b));
    }
}

TEST_CASE("fscore: identical, disjoint, and the half-overlap construction") {
    Rng rng(21);
    PointCloud a = random_cloud(rng, 200);
    CHECK(fscore(a, a, 0.05) == doctest::Approx(100.0));

    PointCloud far = a;
    for (Vec3& p : far.points) p += Vec3{100, 0, 0};
    CHECK(fscore(a, far, 0.05) == 0.0);

    // every other A point is displaced far beyond the threshold, so
    // precision = 0.5, while the remaining on-line points keep every B
    // point within reach, so recall = 1
    PointCloud bigA, bigB;
    for (int i = 0; i < 100; ++i) {
        bigB.points.push_back({static_cast<double>(i), 0, 0});
        bigA.points.push_back({static_cast<double>(i), i % 2 ? 30.0 : 0.0, 0});
    }
    // joint bbox diagonal ~ sqrt(99^2+30^2) = 103.4; threshold 10% = 10.34
    double f = fscore(bigA, bigB, 0.10);
    CHECK(f == doctest::Approx(2.0 * 0.5 / 1.5 * 100.0).epsilon(1e-9));
    CHECK(fscore(bigA, bigB, 0.10) == fscore_serial(bigA, bigB, 0.10));
}

TEST_CASE("fscore is monotone in the threshold") {
    Rng rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        PointCloud a = random_cloud(rng, 150);
        PointCloud b = random_cloud(rng, 150);
        for (Vec3& p : b.points) p += Vec3{rng.uniform(0, 0.5), 0, 0};
        CHECK(fscore(a, b, 0.10) >= fscore(a, b, 0.05));
    }
}

TEST_CASE("evaluate: identical meshes near-perfect, deformations degrade") {
    TriangleMesh sphere = make_icosphere(3);
    MetricsRecord same = evaluate(sphere, sphere, 11);
    CHECK(same.chamfer_x1e4 < 1.0);
    CHECK(same.fscore10 > 99.0);
    CHECK(same.fscore5 > 99.0);

    // at 1.5x the 0.5 gap exceeds the 5% threshold but not the 10% one
    TriangleMesh scaled = sphere;
    for (Vec3& v : scaled.vertices) v = 1.5 * v;
    MetricsRecord worse = evaluate(scaled, sphere, 11);
    CHECK(worse.chamfer_x1e4 > same.chamfer_x1e4);
    CHECK(worse.fscore5 < same.fscore5);
    CHECK(worse.fscore10 <= same.fscore10);

    TriangleMesh doubled = sphere;
    for (Vec3& v : doubled.vertices) v = 2.0 * v;
    MetricsRecord much_worse = evaluate(doubled, sphere, 11);
    CHECK(much_worse.fscore10 < same.fscore10);

    TriangleMesh shifted = sphere;
    for (Vec3& v : shifted.vertices) v += Vec3{0.4, 0, 0};  // 20% of the ~2 diagonal
    MetricsRecord moved = evaluate(shifted, sphere, 11);
    CHECK(moved.fscore10 < same.fscore10);
}

TEST_CASE("evaluate is deterministic and its files are stable") {
    TriangleMesh box = make_box({0, 0, 0}, {1, 0.5, 0.25}, 3);
    TriangleMesh sphere = make_icosphere(2);
    MetricsRecord r1 = evaluate(box, sphere, 77);
    MetricsRecord r2 = evaluate(box, sphere, 77);
    CHECK(r1.chamfer_x1e4 == r2.chamfer_x1e4);
    CHECK(r1.fscore10 == r2.fscore10);

    save_metrics_csv(r1, "tmp_metrics_a.csv", 77);
    save_metrics_csv(r2, "tmp_metrics_b.csv", 77);
    std::ifstream fa("tmp_metrics_a.csv"), fb("tmp_metrics_b.csv");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    save_metrics_json(r1, "tmp_metrics.json", 77);
}
