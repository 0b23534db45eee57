#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include "legoslam/geometry.hpp"

namespace lego {

// Static 3-d KD-tree (median split). Queries are exact; equal distances are
// broken by point index so results are deterministic.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Vec3> points) : pts_(std::move(points)) {
    order_.resize(pts_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(pts_.size());
    if (!pts_.empty()) root_ = build(0, static_cast<int>(pts_.size()));
  }

  std::size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[static_cast<std::size_t>(i)]; }

  struct Neighbor {
    int index = -1;
    double dist_sq = std::numeric_limits<double>::infinity();
  };

  Neighbor nearest(const Vec3& q) const {
    std::vector<Neighbor> out;
    knn(q, 1, out);
    return out.empty() ? Neighbor{} : out[0];
  }

  // k nearest neighbors, ascending by (distance, index).
  void knn(const Vec3& q, int k, std::vector<Neighbor>& out) const {
    knn_if(q, k, nullptr, out);
  }

  // k nearest neighbors among points accepted by `pred` (pred==nullptr
  // accepts all). Exact: the filter is applied inside the search so the
  // result is the true k-nearest of the accepted subset.
  void knn_if(const Vec3& q, int k, const std::function<bool(int)>& pred,
              std::vector<Neighbor>& out) const {
    out.clear();
    if (root_ < 0 || k <= 0) return;
    Heap heap;
    heap.k = static_cast<std::size_t>(k);
    search(root_, q, pred, heap);
    out = std::move(heap.items);
    std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.dist_sq != b.dist_sq ? a.dist_sq < b.dist_sq : a.index < b.index;
    });
  }

 private:
  struct Node {
    int point = -1;
    int left = -1;
    int right = -1;
    int axis = 0;
  };

  struct Heap {
    // max-heap on (dist, index) capped at k entries
    std::vector<Neighbor> items;
    std::size_t k = 0;

    static bool less(const Neighbor& a, const Neighbor& b) {
      return a.dist_sq != b.dist_sq ? a.dist_sq < b.dist_sq : a.index < b.index;
    }
    double worst() const {
      return items.size() < k ? std::numeric_limits<double>::infinity()
                              : items.front().dist_sq;
    }
    void push(Neighbor n) {
      if (items.size() < k) {
        items.push_back(n);
        std::push_heap(items.begin(), items.end(), less);
      } else if (less(n, items.front())) {
        std::pop_heap(items.begin(), items.end(), less);
        items.back() = n;
        std::push_heap(items.begin(), items.end(), less);
      }
    }
  };

  int build(int lo, int hi) {
    if (lo >= hi) return -1;
    // split widest axis
    Vec3 mn = pts_[order_[lo]], mx = pts_[order_[lo]];
    for (int i = lo + 1; i < hi; ++i) {
      mn = mn.cwiseMin(pts_[order_[i]]);
      mx = mx.cwiseMax(pts_[order_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid,
                     order_.begin() + hi, [&](int a, int b) {
                       const double va = pts_[a][axis], vb = pts_[b][axis];
                       return va != vb ? va < vb : a < b;
                     });
    Node node;
    node.point = order_[mid];
    node.axis = axis;
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(lo, mid);
    const int right = build(mid + 1, hi);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int ni, const Vec3& q, const std::function<bool(int)>& pred,
              Heap& heap) const {
    const Node& n = nodes_[ni];
    const Vec3& p = pts_[n.point];
    if (!pred || pred(n.point)) {
      heap.push(Neighbor{n.point, (p - q).squaredNorm()});
    }
    const double delta = q[n.axis] - p[n.axis];
    const int first = delta < 0.0 ? n.left : n.right;
    const int second = delta < 0.0 ? n.right : n.left;
    if (first >= 0) search(first, q, pred, heap);
    if (second >= 0 && delta * delta <= heap.worst()) {
      search(second, q, pred, heap);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace lego
