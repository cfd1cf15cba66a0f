#include "gproc/icp.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace gproc {

RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst) {
  const std::size_t n = std::min(src.size(), dst.size());
  RigidTransform out;
  if (n == 0) return out;
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(n);
  cd /= static_cast<double>(n);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  out.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  out.translation = cd - out.rotation * cs;
  return out;
}

namespace {

void check_non_degenerate(std::span<const Vec3> pts, const char* which) {
  if (pts.size() < 3) throw ValidationError(std::string("/") + which, "ICP needs at least 3 points");
  const Pca pca = principal_axes(pts);
  const double spread = std::sqrt(pca.eigenvalues[0]);
  if (!(spread > 0) || std::sqrt(pca.eigenvalues[1]) <= 1e-9 * spread) {
    throw ValidationError(std::string("/") + which, "ICP input is collinear");
  }
}

Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(std::max<std::size_t>(1, pts.size()));
}

}  // namespace

double mean_closest_distance(std::span<const Vec3> source, const KdTree& target, const RigidTransform& xf,
                             double keep) {
  if (source.empty()) return 0.0;
  if (keep >= 1.0) {
    double sum = 0.0;
    for (const auto& p : source) sum += std::sqrt(target.nearest(xf.apply(p)).second);
    return sum / static_cast<double>(source.size());
  }
  std::vector<double> d;
  d.reserve(source.size());
  for (const auto& p : source) d.push_back(std::sqrt(target.nearest(xf.apply(p)).second));
  const std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(keep * static_cast<double>(d.size())));
  std::nth_element(d.begin(), d.begin() + (n - 1), d.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += d[i];
  return sum / static_cast<double>(n);
}

IcpResult icp_align(std::span<const Vec3> source, const KdTree& target, int maxIter, double tol,
                    std::optional<RigidTransform> init, double rejectDistance, double keep) {
  IcpResult best;
  if (init) {
    best.transform = *init;
  } else {
    Vec3 ct = Vec3::Zero();
    for (std::size_t i = 0; i < target.size(); ++i) ct += target.point(static_cast<int>(i));
    ct /= static_cast<double>(std::max<std::size_t>(1, target.size()));
    best.transform = RigidTransform::translate(ct - centroid(source));
  }
  best.residual = mean_closest_distance(source, target, best.transform, keep);
  RigidTransform current = best.transform;
  double previous = best.residual;
  std::vector<Vec3> src, dst;
  std::vector<std::array<double, 3>> matches;  // (d2, source idx, target idx)
  src.reserve(source.size());
  dst.reserve(source.size());
  const double reject2 = rejectDistance * rejectDistance;
  for (int it = 0; it < maxIter; ++it) {
    matches.clear();
    for (std::size_t i = 0; i < source.size(); ++i) {
      const auto [idx, d2] = target.nearest(current.apply(source[i]));
      if (idx < 0 || d2 > reject2) continue;
      matches.push_back({d2, static_cast<double>(i), static_cast<double>(idx)});
    }
    if (keep < 1.0 && matches.size() > 3) {
      const std::size_t n = std::max<std::size_t>(3, static_cast<std::size_t>(keep * static_cast<double>(matches.size())));
      std::nth_element(matches.begin(), matches.begin() + (n - 1), matches.end());
      matches.resize(n);
      std::sort(matches.begin(), matches.end(), [](const auto& a, const auto& b) { return a[1] < b[1]; });
    }
    src.clear();
    dst.clear();
    for (const auto& m : matches) {
      src.push_back(source[static_cast<std::size_t>(m[1])]);
      dst.push_back(target.point(static_cast<int>(m[2])));
    }
    best.iterations = it + 1;
    if (src.size() < 3) break;
    current = kabsch(src, dst);
    const double residual = mean_closest_distance(source, target, current, keep);
    if (residual < best.residual) {
      best.residual = residual;
      best.transform = current;
    }
    if (std::abs(previous - residual) <= tol * std::max(1.0, previous)) {
      best.converged = true;
      break;
    }
    previous = residual;
  }
  if (best.residual <= tol) best.converged = true;
  return best;
}

IcpResult icp_align(std::span<const Vec3> source, std::span<const Vec3> target, int maxIter, double tol,
                    std::optional<RigidTransform> init, double rejectDistance) {
  check_non_degenerate(source, "source");
  check_non_degenerate(target, "target");
  const KdTree tree(std::vector<Vec3>(target.begin(), target.end()));
  return icp_align(source, tree, maxIter, tol, init, rejectDistance);
}

const std::array<Mat3, 24>& signed_permutations() {
  static const std::array<Mat3, 24> perms = [] {
    std::array<Mat3, 24> out;
    int n = 0;
    std::array<int, 3> p{0, 1, 2};
    do {
      for (int s = 0; s < 8; ++s) {
        Mat3 m = Mat3::Zero();
        for (int r = 0; r < 3; ++r) m(r, p[r]) = (s >> r) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0) out[n++] = m;
      }
    } while (std::next_permutation(p.begin(), p.end()));
    return out;
  }();
  return perms;
}

IcpResult register_shapes(std::span<const Vec3> a, std::span<const Vec3> b, const KdTree& bTree, double scale,
                          int maxPoints, double keep) {
  const std::vector<Vec3> sample = stride_sample(a, static_cast<std::size_t>(maxPoints));
  const Pca pa = principal_axes(a);
  const Pca pb = principal_axes(b);

  std::vector<RigidTransform> starts;
  starts.push_back(RigidTransform::translate(pb.mean - pa.mean));
  for (const Mat3& s : signed_permutations()) {
    RigidTransform t;
    t.rotation = orthonormalize(pb.axes * s * pa.axes.transpose());
    t.translation = pb.mean - t.rotation * pa.mean;
    starts.push_back(t);
  }

  std::vector<IcpResult> results;
  results.reserve(starts.size());
  double bestResidual = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    results.push_back(icp_align(sample, bTree, 30, 1e-9, s, std::numeric_limits<double>::infinity(), keep));
    bestResidual = std::min(bestResidual, results.back().residual);
  }
  const double tie = 1.5 * bestResidual + 1e-6 * scale;
  int pick = -1;
  for (int i = 0; i < static_cast<int>(results.size()); ++i) {
    if (results[i].residual > tie) continue;
    if (pick < 0 || results[i].transform.angle() < results[pick].transform.angle() - 1e-9) pick = i;
  }
  IcpResult out = results[pick];
  if (sample.size() < a.size()) {
    out = icp_align(a, bTree, 30, 1e-9, out.transform, std::numeric_limits<double>::infinity(), keep);
  } else {
    out.residual = mean_closest_distance(a, bTree, out.transform, keep);
  }
  return out;
}

}  // namespace gproc
