#include "gproc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace gproc {

const char* to_string(DataType t) { return t == DataType::Mesh ? "mesh" : "pointcloud"; }

std::array<Vec3, 8> BoundingBox::corners() const {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    out[i] = Vec3((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(), (i & 4) ? max.z() : min.z());
  }
  return out;
}

RigidTransform RigidTransform::rotate(const Vec3& axis, double radians) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
  return t;
}

BoundingBox RigidTransform::apply(const BoundingBox& box) const {
  BoundingBox out;
  if (box.empty()) return out;
  for (const Vec3& c : box.corners()) out.expand(apply(c));
  return out;
}

double RigidTransform::angle() const {
  const double c = std::clamp((rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

bool RigidTransform::approx_equal(const RigidTransform& o, double tol) const {
  return (rotation - o.rotation).cwiseAbs().maxCoeff() <= tol &&
         (translation - o.translation).cwiseAbs().maxCoeff() <= tol;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

double transform_distance(const RigidTransform& a, const RigidTransform& b, double diagonal) {
  const double dt = (a.translation - b.translation).norm() / std::max(diagonal, 1e-300);
  const RigidTransform rel{a.rotation.transpose() * b.rotation, Vec3::Zero()};
  return dt + rel.angle() / std::numbers::pi;
}

// ---------------------------------------------------------------------------

Model Model::mesh(std::vector<Triangle> triangles) {
  if (triangles.empty()) throw EmptyModelError("mesh has no triangles");
  Model m;
  m.type_ = DataType::Mesh;
  m.triangles_ = std::move(triangles);
  m.finish();
  const double tol = 1e-12 * m.diagonal() * m.diagonal();
  for (std::size_t i = 0; i < m.triangles_.size(); ++i) {
    if (!(m.triangles_[i].area() > tol)) {
      throw ValidationError("/elements/" + std::to_string(i), "degenerate triangle (zero area)");
    }
  }
  return m;
}

Model Model::cloud(std::vector<Point> points) {
  if (points.empty()) throw EmptyModelError("point cloud has no points");
  Model m;
  m.type_ = DataType::PointCloud;
  m.points_ = std::move(points);
  for (auto& p : m.points_) {
    if (p.normal) {
      const double n = p.normal->norm();
      if (n > 0) *p.normal /= n;
      else p.normal.reset();
    }
  }
  m.finish();
  return m;
}

void Model::finish() {
  bbox_ = BoundingBox{};
  if (is_mesh()) {
    for (const auto& t : triangles_)
      for (const auto& v : t.v) bbox_.expand(v);
  } else {
    for (const auto& p : points_) bbox_.expand(p.p);
  }
  if (!(bbox_.diagonal() > 0.0)) {
    // A single point or fully coincident geometry still needs a usable scale.
    bbox_.max += Vec3::Constant(1e-9);
  }
}

Element Model::element(std::size_t i) const {
  if (is_mesh()) return triangles_.at(i);
  return points_.at(i);
}

std::vector<Vec3> Model::positions(std::span<const int> indices) const {
  std::vector<Vec3> out;
  if (is_mesh()) {
    out.reserve(indices.size() * 3);
    for (int i : indices)
      for (const auto& v : triangles_[i].v) out.push_back(v);
  } else {
    out.reserve(indices.size());
    for (int i : indices) out.push_back(points_[i].p);
  }
  return out;
}

BoundingBox Model::bbox_of(std::span<const int> indices) const {
  BoundingBox box;
  if (is_mesh()) {
    for (int i : indices)
      for (const auto& v : triangles_[i].v) box.expand(v);
  } else {
    for (int i : indices) box.expand(points_[i].p);
  }
  return box;
}

BoundingBox bbox_of(std::span<const Vec3> points) {
  if (points.empty()) throw EmptyModelError("bbox of empty point set");
  BoundingBox box;
  for (const auto& p : points) box.expand(p);
  return box;
}

BoundingBox bbox_of(std::span<const Element> elements) {
  if (elements.empty()) throw EmptyModelError("bbox of empty element list");
  BoundingBox box;
  for (const auto& e : elements) {
    if (const auto* t = std::get_if<Triangle>(&e)) {
      for (const auto& v : t->v) box.expand(v);
    } else {
      box.expand(std::get<Point>(e).p);
    }
  }
  return box;
}

int ComponentSet::label_count() const {
  int n = 0;
  for (int l : labels) n = std::max(n, l + 1);
  return n;
}

RigidTransform frame_for(std::span<const Vec3> pts, const Mat3& rotation, Vec3* localSize) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  const Mat3 rt = rotation.transpose();
  for (const auto& p : pts) {
    const Vec3 q = rt * p;
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  if (localSize) *localSize = pts.empty() ? Vec3::Zero() : Vec3(hi - lo);
  RigidTransform f;
  f.rotation = rotation;
  f.translation = pts.empty() ? Vec3::Zero() : Vec3(rotation * lo);
  return f;
}

double round_significant(double v, int digits) {
  if (!std::isfinite(v) || v == 0.0) return v == 0.0 ? 0.0 : v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  const double r = std::strtod(buf, nullptr);
  return r == 0.0 ? 0.0 : r;  // drop negative zero
}

}  // namespace gproc
