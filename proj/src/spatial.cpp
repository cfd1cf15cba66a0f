#include "gproc/spatial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

namespace gproc {

namespace {
constexpr int kLeafSize = 12;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<int>(points_.size()), 0);
  }
}

int KdTree::build(int lo, int hi, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{lo, hi});
  if (hi - lo <= kLeafSize) return id;

  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 mx = -mn;
  for (int i = lo; i < hi; ++i) {
    mn = mn.cwiseMin(points_[order_[i]]);
    mx = mx.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const int mid = (lo + hi) / 2;
  std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                   [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
  nodes_[id].axis = axis;
  nodes_[id].split = points_[order_[mid]][axis];
  const int l = build(lo, mid, depth + 1);
  const int r = build(mid, hi, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::pair<int, double> KdTree::nearest(const Vec3& q) const {
  if (points_.empty()) return {-1, std::numeric_limits<double>::infinity()};
  int best = -1;
  double bestD = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    auto [ni, bound] = stack.back();
    stack.pop_back();
    if (bound >= bestD) continue;
    const Node& n = nodes_[ni];
    if (n.axis < 0) {
      for (int i = n.lo; i < n.hi; ++i) {
        const double d = (points_[order_[i]] - q).squaredNorm();
        if (d < bestD || (d == bestD && order_[i] < best)) {
          bestD = d;
          best = order_[i];
        }
      }
      continue;
    }
    const double diff = q[n.axis] - n.split;
    const int nearSide = diff < 0 ? n.left : n.right;
    const int farSide = diff < 0 ? n.right : n.left;
    stack.emplace_back(farSide, std::max(bound, diff * diff));
    stack.emplace_back(nearSide, bound);
  }
  return {best, bestD};
}

std::vector<int> KdTree::knn(const Vec3& q, int k) const {
  std::vector<int> out;
  if (points_.empty() || k <= 0) return out;
  std::priority_queue<std::pair<double, int>> heap;  // max-heap of (dist, idx)
  std::vector<std::pair<int, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    auto [ni, bound] = stack.back();
    stack.pop_back();
    if (static_cast<int>(heap.size()) == k && bound >= heap.top().first) continue;
    const Node& n = nodes_[ni];
    if (n.axis < 0) {
      for (int i = n.lo; i < n.hi; ++i) {
        const double d = (points_[order_[i]] - q).squaredNorm();
        if (static_cast<int>(heap.size()) < k) {
          heap.emplace(d, order_[i]);
        } else if (d < heap.top().first) {
          heap.pop();
          heap.emplace(d, order_[i]);
        }
      }
      continue;
    }
    const double diff = q[n.axis] - n.split;
    const int nearSide = diff < 0 ? n.left : n.right;
    const int farSide = diff < 0 ? n.right : n.left;
    stack.emplace_back(farSide, std::max(bound, diff * diff));
    stack.emplace_back(nearSide, bound);
  }
  out.resize(heap.size());
  for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

std::vector<int> KdTree::radius(const Vec3& q, double r) const {
  std::vector<int> out;
  if (points_.empty()) return out;
  const double r2 = r * r;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (n.axis < 0) {
      for (int i = n.lo; i < n.hi; ++i)
        if ((points_[order_[i]] - q).squaredNorm() <= r2) out.push_back(order_[i]);
      continue;
    }
    const double diff = q[n.axis] - n.split;
    if (diff <= r) stack.push_back(n.left);
    if (diff >= -r) stack.push_back(n.right);
  }
  return out;
}

// ---------------------------------------------------------------------------

Pca principal_axes(std::span<const Vec3> points) {
  Pca out;
  if (points.empty()) return out;
  for (const auto& p : points) out.mean += p;
  out.mean /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - out.mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // Eigen sorts ascending.
  for (int i = 0; i < 3; ++i) {
    out.eigenvalues[i] = std::max(0.0, es.eigenvalues()[2 - i]);
    out.axes.col(i) = es.eigenvectors().col(2 - i);
  }
  if (out.axes.determinant() < 0) out.axes.col(2) = -out.axes.col(2);
  return out;
}

// Incremental convex hull; only the volume is needed so faces are kept as
// plain index triples with outward orientation.
double convex_hull_volume(std::span<const Vec3> pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 4) return 0.0;
  BoundingBox box;
  for (const auto& p : pts) box.expand(p);
  const double scale = std::max(box.diagonal(), 1e-300);
  const double eps = 1e-10 * scale;

  // Initial tetrahedron: extreme points along x, then farthest from line, then plane.
  int i0 = 0, i1 = 0;
  for (int i = 1; i < n; ++i) {
    if (pts[i].x() < pts[i0].x()) i0 = i;
    if (pts[i].x() > pts[i1].x()) i1 = i;
  }
  if ((pts[i1] - pts[i0]).norm() <= eps) {
    double best = -1;
    for (int i = 0; i < n; ++i) {
      const double d = (pts[i] - pts[i0]).norm();
      if (d > best) {
        best = d;
        i1 = i;
      }
    }
    if (best <= eps) return 0.0;
  }
  const Vec3 dir = (pts[i1] - pts[i0]).normalized();
  int i2 = -1;
  double best = eps;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).cross(dir).norm();
    if (d > best) {
      best = d;
      i2 = i;
    }
  }
  if (i2 < 0) return 0.0;
  const Vec3 nrm = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = -1;
  best = eps;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs((pts[i] - pts[i0]).dot(nrm));
    if (d > best) {
      best = d;
      i3 = i;
    }
  }
  if (i3 < 0) return 0.0;

  const Vec3 inner = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  std::vector<std::array<int, 3>> faces;
  auto addFace = [&](int a, int b, int c) {
    const Vec3 fn = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    if (fn.dot(inner - pts[a]) > 0) std::swap(b, c);
    faces.push_back({a, b, c});
  };
  addFace(i0, i1, i2);
  addFace(i0, i1, i3);
  addFace(i0, i2, i3);
  addFace(i1, i2, i3);

  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    std::vector<char> visible(faces.size(), 0);
    bool any = false;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const auto& fc = faces[f];
      const Vec3 fn = (pts[fc[1]] - pts[fc[0]]).cross(pts[fc[2]] - pts[fc[0]]);
      const double len = fn.norm();
      if (len <= 0) continue;
      if (fn.dot(pts[p] - pts[fc[0]]) / len > eps) {
        visible[f] = 1;
        any = true;
      }
    }
    if (!any) continue;
    // Horizon: directed edges of visible faces whose twin belongs to a hidden face.
    std::map<std::pair<int, int>, int> edgeCount;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      for (int e = 0; e < 3; ++e) edgeCount[{faces[f][e], faces[f][(e + 1) % 3]}]++;
    }
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() + 8);
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (!visible[f]) next.push_back(faces[f]);
    for (const auto& [edge, cnt] : edgeCount) {
      if (edgeCount.count({edge.second, edge.first})) continue;
      next.push_back({edge.first, edge.second, p});
    }
    faces = std::move(next);
  }

  double vol = 0.0;
  for (const auto& f : faces) {
    vol += (pts[f[0]] - inner).dot((pts[f[1]] - inner).cross(pts[f[2]] - inner)) / 6.0;
  }
  return std::abs(vol);
}

double median_spacing(const KdTree& tree, int maxSamples) {
  const int n = static_cast<int>(tree.size());
  if (n < 2) return 0.0;
  const int step = std::max(1, n / std::max(1, maxSamples));
  std::vector<double> d;
  for (int i = 0; i < n; i += step) {
    auto nn = tree.knn(tree.point(i), 2);
    if (nn.size() == 2) d.push_back((tree.point(nn[1]) - tree.point(i)).norm());
  }
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return d[d.size() / 2];
}

double overlap_fraction(const BoundingBox& a, const BoundingBox& b, double pad) {
  double frac = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double inter = std::max(0.0, std::min(a.max[k], b.max[k]) - std::max(a.min[k], b.min[k]));
    frac *= (inter + pad) / (b.max[k] - b.min[k] + pad);
  }
  return std::min(1.0, frac);
}

int tightest_container(std::span<const BoundingBox> boxes, int i, double slack, bool* strict,
                       const std::vector<char>* active) {
  auto measure = [&](const BoundingBox& b) { return (b.size().array() + slack).prod(); };
  const double mi = measure(boxes[i]);
  const Vec3 center = boxes[i].center();
  int bestStrict = -1, bestNear = -1;
  double mStrict = 0, mNear = 0;
  for (int j = 0; j < static_cast<int>(boxes.size()); ++j) {
    if (j == i || (active && !(*active)[j])) continue;
    const double mj = measure(boxes[j]);
    if (!(mj > mi || (mj == mi && j < i))) continue;
    if (boxes[j].contains(boxes[i], slack)) {
      if (bestStrict < 0 || mj < mStrict) {
        bestStrict = j;
        mStrict = mj;
      }
    } else if (mj > mi && boxes[j].contains(center, slack) && overlap_fraction(boxes[j], boxes[i], slack) >= 0.5) {
      if (bestNear < 0 || mj < mNear) {
        bestNear = j;
        mNear = mj;
      }
    }
  }
  const bool useNear = bestNear >= 0 && (bestStrict < 0 || mNear < mStrict);
  if (strict) *strict = !useNear;
  return useNear ? bestNear : bestStrict;
}

std::vector<Vec3> stride_sample(std::span<const Vec3> points, std::size_t maxCount) {
  if (points.size() <= maxCount) return {points.begin(), points.end()};
  std::vector<Vec3> out;
  out.reserve(maxCount);
  const double step = static_cast<double>(points.size()) / static_cast<double>(maxCount);
  for (std::size_t i = 0; i < maxCount; ++i) out.push_back(points[static_cast<std::size_t>(i * step)]);
  return out;
}

}  // namespace gproc
