#include "qrfit/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace qrfit {

namespace {
constexpr int kLeafSize = 8;
}

void KdTree::build(const std::vector<Vec3>& points) {
    points_ = points;
    nodes_.clear();
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    root_ = points_.empty() ? -1 : build_node(0, static_cast<int>(points_.size()));
}

int KdTree::build_node(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    for (int i = begin; i < end; ++i) node.box.expand(points_[order_[i]]);

    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    Vec3 extent = node.box.hi - node.box.lo;
    int axis = 0;
    if (extent.y > extent.x) axis = 1;
    if (extent.z > extent[axis]) axis = 2;

    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         double pa = points_[a][axis], pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });

    int left = build_node(begin, mid);
    int right = build_node(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    return id;
}

namespace {

double box_dist2(const Aabb& box, const Vec3& q) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
        double v = q[k];
        double lo = box.lo[k], hi = box.hi[k];
        double d = v < lo ? lo - v : (v > hi ? v - hi : 0.0);
        d2 += d * d;
    }
    return d2;
}

}  // namespace

void KdTree::search(int node_id, const Vec3& q, double& best_d2, int& best_idx) const {
    const Node& node = nodes_[node_id];
    if (node.left < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            int idx = order_[i];
            double d2 = norm2(points_[idx] - q);
            if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
        return;
    }
    // visit the nearer child first
    int first = node.left, second = node.right;
    if (q[node.axis] > node.split) std::swap(first, second);
    if (box_dist2(nodes_[first].box, q) <= best_d2) search(first, q, best_d2, best_idx);
    if (box_dist2(nodes_[second].box, q) <= best_d2) search(second, q, best_d2, best_idx);
}

int KdTree::nearest(const Vec3& query, double* d2_out) const {
    if (root_ < 0) return -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    int best_idx = -1;
    search(root_, query, best_d2, best_idx);
    if (d2_out) *d2_out = best_d2;
    return best_idx;
}

}  // namespace qrfit
