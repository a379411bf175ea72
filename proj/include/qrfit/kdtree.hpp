#pragma once

#include "qrfit/geom.hpp"

#include <vector>

namespace qrfit {

/// Static 3D kd-tree for nearest-neighbor queries. Queries are const and can
/// run concurrently. Ties on distance resolve to the smallest point index,
/// matching the brute-force convention used in tests.
class KdTree {
public:
    KdTree() = default;
    explicit KdTree(const std::vector<Vec3>& points) { build(points); }

    void build(const std::vector<Vec3>& points);

    bool empty() const { return points_.empty(); }
    size_t size() const { return points_.size(); }

    /// Index of the nearest point; d2_out receives the squared distance.
    int nearest(const Vec3& query, double* d2_out = nullptr) const;

private:
    struct Node {
        Aabb box;
        int left = -1;    // child node, or -1 for leaf
        int right = -1;
        int begin = 0;    // leaf range into order_
        int end = 0;
        int axis = 0;
        double split = 0.0;
    };

    int build_node(int begin, int end);
    void search(int node, const Vec3& q, double& best_d2, int& best_idx) const;

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace qrfit
