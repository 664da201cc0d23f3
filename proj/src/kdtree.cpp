#include "plad/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace plad {

namespace {

double coord(const Vec3& p, int axis) {
  return axis == 0 ? p.x : (axis == 1 ? p.y : p.z);
}

}  // namespace

KdTree::KdTree(const std::vector<Vec3>& points) : pts_(points) {
  if (pts_.empty()) throw std::invalid_argument("KdTree: empty point set");
  std::vector<int> idx(pts_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(pts_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 3;
  const int mid = (lo + hi) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                   [&](int a, int b) {
                     const double ca = coord(pts_[a], axis), cb = coord(pts_[b], axis);
                     if (ca != cb) return ca < cb;
                     return a < b;  // duplicate coordinates split deterministically
                   });
  KdNode node;
  node.axis = axis;
  node.point = idx[mid];
  node.split = coord(pts_[idx[mid]], axis);
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int l = build(idx, lo, mid, depth + 1);
  const int r = build(idx, mid + 1, hi, depth + 1);
  nodes_[self].left = l;
  nodes_[self].right = r;
  return self;
}

void KdTree::search(int node, const Vec3& q, int k,
                    std::vector<std::pair<double, int>>& heap) const {
  if (node < 0) return;
  const KdNode& nd = nodes_[node];
  const std::pair<double, int> cand{dist2(q, pts_[nd.point]), nd.point};
  if (static_cast<int>(heap.size()) < k) {
    heap.push_back(cand);
    std::push_heap(heap.begin(), heap.end());
  } else if (cand < heap.front()) {
    std::pop_heap(heap.begin(), heap.end());
    heap.back() = cand;
    std::push_heap(heap.begin(), heap.end());
  }
  const double delta = coord(q, nd.axis) - nd.split;
  const int near = delta <= 0.0 ? nd.left : nd.right;
  const int far = delta <= 0.0 ? nd.right : nd.left;
  search(near, q, k, heap);
  // Descend into the far half unless every point there is strictly worse
  // than the current worst; equality must descend so index ties stay exact.
  if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().first)
    search(far, q, k, heap);
}

std::vector<std::pair<double, int>> KdTree::knn(const Vec3& query, int k) const {
  if (k < 1 || k > size()) throw std::invalid_argument("KdTree::knn: k out of range");
  std::vector<std::pair<double, int>> heap;
  heap.reserve(k);
  search(root_, query, k, heap);
  std::sort_heap(heap.begin(), heap.end());
  return heap;
}

std::vector<int> KdTree::knn_indices(const Vec3& query, int k) const {
  auto pairs = knn(query, k);
  std::vector<int> out(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) out[i] = pairs[i].second;
  return out;
}

}  // namespace plad
