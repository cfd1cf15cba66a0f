#pragma once

#include "gproc/geometry.hpp"

#include <span>
#include <utility>
#include <vector>

namespace gproc {

/// Static 3D kd-tree over a copy of the input points.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(int i) const { return points_[i]; }

  /// (index, squared distance) of the nearest point; index -1 when empty.
  std::pair<int, double> nearest(const Vec3& q) const;
  /// Indices of the k nearest points, closest first.
  std::vector<int> knn(const Vec3& q, int k) const;
  /// Indices of all points within `radius` (unordered).
  std::vector<int> radius(const Vec3& q, double radius) const;

 private:
  struct Node {
    int lo, hi;    // range into order_
    int axis = -1; // -1 = leaf
    double split = 0.0;
    int left = -1, right = -1;
  };
  int build(int lo, int hi, int depth);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

struct Pca {
  Vec3 mean = Vec3::Zero();
  Vec3 eigenvalues = Vec3::Zero();  // descending
  Mat3 axes = Mat3::Identity();     // columns, right-handed, matching eigenvalues
};

Pca principal_axes(std::span<const Vec3> points);

/// Volume of the convex hull; 0 for (near-)coplanar input.
double convex_hull_volume(std::span<const Vec3> points);

/// Median nearest-neighbour spacing of a point set (0 for fewer than two points).
double median_spacing(const KdTree& tree, int maxSamples = 512);

/// Index of the smallest box (by inflated volume) strictly larger than box `i`
/// that contains it within `slack`, or that contains its centre and covers at
/// least half of it when that one is tighter. `strict` reports which case won.
/// Boxes with `active[j] == 0` are skipped. Returns -1 when nothing qualifies.
int tightest_container(std::span<const BoundingBox> boxes, int i, double slack, bool* strict = nullptr,
                       const std::vector<char>* active = nullptr);

/// Fraction of box `b` covered by box `a`, per-axis lengths inflated by `pad`.
double overlap_fraction(const BoundingBox& a, const BoundingBox& b, double pad);

/// Deterministic evenly-strided subsample of at most `maxCount` points.
std::vector<Vec3> stride_sample(std::span<const Vec3> points, std::size_t maxCount);

}  // namespace gproc
