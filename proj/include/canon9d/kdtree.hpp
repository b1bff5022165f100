#pragma once

#include <vector>

#include "canon9d/core.hpp"

namespace canon9d {

/// Static 3D kd-tree for exact nearest-neighbour queries. Among equidistant
/// points the lowest index wins, so results match a linear scan exactly.
class KdTree3 {
 public:
  struct Hit {
    Eigen::Index index = -1;
    double squared_distance = 0.0;
  };

  explicit KdTree3(Points points, int leaf_size = 12);

  Hit nearest(const Vector3& query) const;
  const Points& points() const { return points_; }
  Eigen::Index size() const { return points_.cols(); }

 private:
  struct Node {
    int begin = 0;
    int end = 0;
    int left = -1;
    int right = -1;
    int axis = 0;
    double split = 0.0;
  };

  int build(int begin, int end, int leaf_size);
  void search(int node, const Vector3& q, Hit& best) const;

  Points points_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

}  // namespace canon9d
