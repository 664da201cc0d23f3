#pragma once

#include <utility>
#include <vector>

#include "plad/point_cloud.hpp"

namespace plad {

/// Static kd-tree over a point set. Build once, query many; queries return
/// exactly what exhaustive search ordered by (squared distance, index)
/// would, which the neighbor-sensitive pipeline stages rely on.
class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points);

  /// k nearest neighbors of an arbitrary query position, ascending by
  /// (squared distance, point index).
  std::vector<std::pair<double, int>> knn(const Vec3& query, int k) const;

  /// Indices only, same ordering.
  std::vector<int> knn_indices(const Vec3& query, int k) const;

  int size() const { return static_cast<int>(pts_.size()); }

 private:
  struct KdNode {
    int left = -1, right = -1;
    int point = -1;   // leaf payload or split point
    int axis = -1;    // -1 marks a leaf
    double split = 0.0;
  };

  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void search(int node, const Vec3& q, int k,
              std::vector<std::pair<double, int>>& heap) const;

  std::vector<Vec3> pts_;
  std::vector<KdNode> nodes_;
  int root_ = -1;
};

}  // namespace plad
