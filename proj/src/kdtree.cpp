#include "canon9d/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace canon9d {

KdTree3::KdTree3(Points points, int leaf_size) : points_(std::move(points)) {
  order_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  if (points_.cols() > 0) build(0, static_cast<int>(points_.cols()), std::max(1, leaf_size));
}

int KdTree3::build(int begin, int end, int leaf_size) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= leaf_size) return id;

  Vector3 lo = Vector3::Constant(std::numeric_limits<double>::infinity());
  Vector3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(order_[static_cast<std::size_t>(i)]));
    hi = hi.cwiseMax(points_.col(order_[static_cast<std::size_t>(i)]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](Eigen::Index a, Eigen::Index b) {
                     const double pa = points_(axis, a), pb = points_(axis, b);
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_(axis, order_[static_cast<std::size_t>(mid)]);
  const int left = build(begin, mid, leaf_size);
  const int right = build(mid, end, leaf_size);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree3::search(int node, const Vector3& q, Hit& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const Eigen::Index idx = order_[static_cast<std::size_t>(i)];
      const double d = (points_.col(idx) - q).squaredNorm();
      if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) {
        best.squared_distance = d;
        best.index = idx;
      }
    }
    return;
  }
  const double diff = q(n.axis) - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  // Left children hold coordinates <= split and right children >= split, so the
  // far side can only contain points at least |diff| away.
  if (diff * diff <= best.squared_distance) search(far, q, best);
}

KdTree3::Hit KdTree3::nearest(const Vector3& query) const {
  Hit best{-1, std::numeric_limits<double>::infinity()};
  if (!nodes_.empty()) search(0, query, best);
  return best;
}

}  // namespace canon9d
