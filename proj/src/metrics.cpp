#include "qrfit/metrics.hpp"

#include "qrfit/error.hpp"
#include "qrfit/kdtree.hpp"
#include "qrfit/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>

namespace qrfit {

namespace {

// nearest squared distance from every point of `from` into `tree`
std::vector<double> nearest_sq(const std::vector<Vec3>& from, const KdTree& tree) {
    std::vector<double> d2(from.size());
    const std::int64_t n = static_cast<std::int64_t>(from.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double d;
        tree.nearest(from[i], &d);
        d2[i] = d;
    }
    return d2;
}

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double joint_diagonal(const PointCloud& a, const PointCloud& b) {
    Aabb box = a.bounds();
    box.expand(b.bounds());
    return box.diagonal();
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw InvariantError("chamfer requires non-empty clouds");
    KdTree ta(a.points), tb(b.points);
    return mean(nearest_sq(a.points, tb)) + mean(nearest_sq(b.points, ta));
}

double chamfer_serial(const PointCloud& a, const PointCloud& b) {
    if (a.empty() || b.empty()) throw InvariantError("chamfer requires non-empty clouds");
    auto one_way = [](const PointCloud& from, const PointCloud& to) {
        double sum = 0.0;
        for (const Vec3& p : from.points) {
            double best = norm2(p - to.points[0]);
            for (size_t q = 1; q < to.points.size(); ++q) best = std::min(best, norm2(p - to.points[q]));
            sum += best;
        }
        return sum / static_cast<double>(from.points.size());
    };
    return one_way(a, b) + one_way(b, a);
}

namespace {

double fscore_impl(const PointCloud& a, const PointCloud& b, double d_fraction, bool brute) {
    if (a.empty() || b.empty()) throw InvariantError("fscore requires non-empty clouds");
    if (!(d_fraction > 0 && d_fraction < 1)) throw InvariantError("fscore threshold fraction must be in (0,1)");
    double thr = d_fraction * joint_diagonal(a, b);
    double thr2 = thr * thr;

    auto fraction_within = [&](const PointCloud& from, const PointCloud& to) {
        std::vector<double> d2;
        if (brute) {
            d2.reserve(from.points.size());
            for (const Vec3& p : from.points) {
                double best = norm2(p - to.points[0]);
                for (size_t q = 1; q < to.points.size(); ++q) best = std::min(best, norm2(p - to.points[q]));
                d2.push_back(best);
            }
        } else {
            KdTree tree(to.points);
            d2 = nearest_sq(from.points, tree);
        }
        std::int64_t hits = 0;
        for (double d : d2)
            if (d <= thr2) ++hits;
        return static_cast<double>(hits) / static_cast<double>(from.points.size());
    };

    double precision = fraction_within(a, b);
    double recall = fraction_within(b, a);
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall) * 100.0;
}

}  // namespace

double fscore(const PointCloud& a, const PointCloud& b, double d_fraction) {
    return fscore_impl(a, b, d_fraction, false);
}

double fscore_serial(const PointCloud& a, const PointCloud& b, double d_fraction) {
    return fscore_impl(a, b, d_fraction, true);
}

MetricsRecord evaluate(const TriangleMesh& pred, const TriangleMesh& gt, std::uint64_t seed) {
    if (pred.faces.empty() || gt.faces.empty()) throw InvariantError("evaluate requires non-empty meshes");
    PointCloud pa = sample_points_uniform(pred, 10000, Rng::derive(seed, "eval-pred"));
    PointCloud pb = sample_points_uniform(gt, 10000, Rng::derive(seed, "eval-gt"));

    MetricsRecord rec;
    double diag = joint_diagonal(pa, pb);
    PointCloud na = pa, nb = pb;
    for (Vec3& p : na.points) p = p / diag;
    for (Vec3& p : nb.points) p = p / diag;
    rec.chamfer_x1e4 = chamfer(na, nb) * 1e4;
    rec.fscore10 = fscore(pa, pb, 0.10);
    rec.fscore5 = fscore(pa, pb, 0.05);
    return rec;
}

void save_metrics_csv(const MetricsRecord& rec, const std::string& path, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    char buf[256];
    out << "# chamfer convention: bidirectional mean-squared on bbox-diagonal-normalized clouds, x1e4\n";
    out << "# seed " << seed << "\n";
    out << "chamfer_x1e4,fscore10,fscore5\n";
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", rec.chamfer_x1e4, rec.fscore10, rec.fscore5);
    out << buf;
}

void save_metrics_json(const MetricsRecord& rec, const std::string& path, std::uint64_t seed) {
    nlohmann::json j;
    j["chamfer_x1e4"] = rec.chamfer_x1e4;
    j["fscore10"] = rec.fscore10;
    j["fscore5"] = rec.fscore5;
    j["seed"] = seed;
    j["chamfer_convention"] = "bidirectional mean-squared on bbox-diagonal-normalized clouds, x1e4";
    std::ofstream out(path);
    if (!out) throw InvariantError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace qrfit
