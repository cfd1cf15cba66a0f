#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gproc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_ = 0;
};

class EmptyModelError : public Error {
 public:
  using Error::Error;
};

class UnsupportedTypeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a document violates a schema; `path()` is a JSON pointer.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

struct Triangle {
  std::array<Vec3, 3> v;
  // Shared-vertex ids from the source file; -1 when unknown (connectivity then
  // falls back to welding by position).
  std::array<int, 3> vid{-1, -1, -1};

  Vec3 centroid() const { return (v[0] + v[1] + v[2]) / 3.0; }
  Vec3 cross() const { return (v[1] - v[0]).cross(v[2] - v[0]); }
  double area() const { return 0.5 * cross().norm(); }
  Vec3 normal() const {
    const Vec3 c = cross();
    const double n = c.norm();
    return n > 0.0 ? Vec3(c / n) : Vec3::Zero();
  }
};

struct Point {
  Vec3 p = Vec3::Zero();
  std::optional<Vec3> normal;
};

using Element = std::variant<Triangle, Point>;

enum class DataType { Mesh, PointCloud };

const char* to_string(DataType t);

// ---------------------------------------------------------------------------
// Bounding boxes and rigid transforms
// ---------------------------------------------------------------------------

struct BoundingBox {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  static BoundingBox of_corners(const Vec3& a, const Vec3& b) {
    BoundingBox box;
    box.expand(a);
    box.expand(b);
    return box;
  }

  bool empty() const { return (min.array() > max.array()).any(); }
  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void expand(const BoundingBox& o) {
    if (o.empty()) return;
    expand(o.min);
    expand(o.max);
  }
  Vec3 size() const { return empty() ? Vec3::Zero() : Vec3(max - min); }
  Vec3 center() const { return 0.5 * (min + max); }
  double volume() const { return size().prod(); }
  double diagonal() const { return size().norm(); }

  /// Closed-set containment with `slack` absolute tolerance.
  bool contains(const BoundingBox& o, double slack = 0.0) const {
    return (o.min.array() >= min.array() - slack).all() &&
           (o.max.array() <= max.array() + slack).all();
  }
  bool contains(const Vec3& p, double slack = 0.0) const {
    return (p.array() >= min.array() - slack).all() && (p.array() <= max.array() + slack).all();
  }
  std::array<Vec3, 8> corners() const;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform translate(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform rotate(const Vec3& axis, double radians);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_vector(const Vec3& d) const { return rotation * d; }
  /// AABB of the eight transformed corners.
  BoundingBox apply(const BoundingBox& box) const;

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  RigidTransform operator*(const RigidTransform& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  /// Geodesic rotation angle in [0, pi].
  double angle() const;
  bool is_valid(double tol = 1e-9) const;
  bool approx_equal(const RigidTransform& o, double tol) const;
};

/// a * b: apply b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// Nearest proper rotation to `m` (SVD projection).
Mat3 orthonormalize(const Mat3& m);

/// Translation distance / diagonal + geodesic angle / pi.
double transform_distance(const RigidTransform& a, const RigidTransform& b, double diagonal);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Homogeneous bag of triangles or points. Immutable after construction.
class Model {
 public:
  static Model mesh(std::vector<Triangle> triangles);
  static Model cloud(std::vector<Point> points);

  DataType type() const { return type_; }
  bool is_mesh() const { return type_ == DataType::Mesh; }
  std::size_t size() const { return is_mesh() ? triangles_.size() : points_.size(); }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Point>& points() const { return points_; }
  Element element(std::size_t i) const;

  const BoundingBox& bbox() const { return bbox_; }
  double diagonal() const { return bbox_.diagonal(); }

  /// Element positions used for geometric analysis: triangle vertices or points.
  std::vector<Vec3> positions(std::span<const int> indices) const;
  BoundingBox bbox_of(std::span<const int> indices) const;

 private:
  Model() = default;
  void finish();

  DataType type_ = DataType::Mesh;
  std::vector<Triangle> triangles_;
  std::vector<Point> points_;
  BoundingBox bbox_;
};

BoundingBox bbox_of(std::span<const Vec3> points);
BoundingBox bbox_of(std::span<const Element> elements);

// ---------------------------------------------------------------------------
// Segmentation output
// ---------------------------------------------------------------------------

struct Component {
  int id = 0;
  std::vector<int> elements;  // indices into Model, sorted
  BoundingBox bbox;           // world AABB
  // Places the component's elements: world = frame * local, local box = [0, localSize].
  RigidTransform frame;
  Vec3 localSize = Vec3::Zero();
};

struct ComponentSet {
  std::vector<Component> components;
  std::vector<int> labels;  // label per component, dense 0..N_l-1
  std::vector<int> seeds;   // per label: index of the component the others were matched against
  std::vector<int> noise;   // element indices discarded as noise
  bool degenerate = false;
  std::vector<std::string> warnings;

  int component_count() const { return static_cast<int>(components.size()); }
  int label_count() const;
};

/// Frame whose local AABB of `pts` (after rotating by `rotation`^T) starts at the origin.
RigidTransform frame_for(std::span<const Vec3> pts, const Mat3& rotation, Vec3* localSize);

/// Rounds to `digits` significant decimal digits.
double round_significant(double v, int digits = 9);

}  // namespace gproc
