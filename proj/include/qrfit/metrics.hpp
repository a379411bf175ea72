#pragma once

#include "qrfit/mesh.hpp"

#include <cstdint>
#include <string>

namespace qrfit {

/// Bidirectional mean-squared nearest-neighbor distance. Symmetric in its
/// arguments, zero only for coincident point sets.
double chamfer(const PointCloud& a, const PointCloud& b);
/// O(n^2) reference; the accelerated version must match it exactly.
double chamfer_serial(const PointCloud& a, const PointCloud& b);

/// Harmonic mean of precision/recall (percent) at threshold
/// d_fraction * diagonal(joint bounding box).
double fscore(const PointCloud& a, const PointCloud& b, double d_fraction);
double fscore_serial(const PointCloud& a, const PointCloud& b, double d_fraction);

/// Reported evaluation record. chamfer_x1e4 is the bidirectional
/// mean-squared Chamfer distance of clouds rescaled by 1/diag(joint bbox),
/// times 1e4; f-scores are percentages.
struct MetricsRecord {
    double chamfer_x1e4 = 0.0;
    double fscore10 = 0.0;
    double fscore5 = 0.0;
};

/// Samples 10,000 surface points from each mesh (seeded) and computes the
/// record above.
MetricsRecord evaluate(const TriangleMesh& pred, const TriangleMesh& gt, std::uint64_t seed);

void save_metrics_csv(const MetricsRecord& rec, const std::string& path, std::uint64_t seed);
void save_metrics_json(const MetricsRecord& rec, const std::string& path, std::uint64_t seed);

}  // namespace qrfit
