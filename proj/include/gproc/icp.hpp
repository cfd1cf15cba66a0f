#pragma once

#include "gproc/geometry.hpp"
#include "gproc/spatial.hpp"

#include <limits>
#include <optional>
#include <span>

namespace gproc {

struct IcpResult {
  RigidTransform transform;  // maps source onto target
  double residual = 0.0;     // mean closest-point distance at `transform`
  int iterations = 0;
  bool converged = false;
};

/// Least-squares rigid motion taking src[i] to dst[i].
RigidTransform kabsch(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Point-to-point ICP. Without `init` the source centroid is moved onto the
/// target centroid first. Correspondences farther than `rejectDistance` are
/// ignored when estimating the motion. Throws ValidationError on fewer than
/// three or collinear points.
IcpResult icp_align(std::span<const Vec3> source, std::span<const Vec3> target, int maxIter = 50, double tol = 1e-10,
                    std::optional<RigidTransform> init = std::nullopt,
                    double rejectDistance = std::numeric_limits<double>::infinity());
/// `keep` < 1 trims each iteration to the closest fraction of correspondences
/// (partial overlap); the residual is then the trimmed mean.
IcpResult icp_align(std::span<const Vec3> source, const KdTree& target, int maxIter, double tol,
                    std::optional<RigidTransform> init,
                    double rejectDistance = std::numeric_limits<double>::infinity(), double keep = 1.0);

/// Mean distance from transformed source points to their nearest target point,
/// over the closest `keep` fraction of them.
double mean_closest_distance(std::span<const Vec3> source, const KdTree& target, const RigidTransform& xf,
                             double keep = 1.0);

/// The 24 proper signed permutation matrices.
const std::array<Mat3, 24>& signed_permutations();

/// Global rigid registration of shape `a` onto shape `b`: tries the centroid
/// offset and the 24 PCA-frame pairings, refines each by ICP and keeps the
/// lowest residual. Among near-equal residuals the smallest rotation wins.
IcpResult register_shapes(std::span<const Vec3> a, std::span<const Vec3> b, const KdTree& bTree, double scale,
                          int maxPoints = 400, double keep = 1.0);

}  // namespace gproc
