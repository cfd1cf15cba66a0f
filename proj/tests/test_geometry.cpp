#include <doctest.h>

#include "gproc/fixtures.hpp"
#include "gproc/geometry.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>

using namespace gproc;

namespace {

// Independent oracle: groups triangles by shared vertex ids and returns the
// bounding box of every connected group.
std::vector<BoundingBox> connected_boxes(const Model& m) {
  std::map<int, int> parent;
  std::function<int(int)> find = [&](int x) {
    if (!parent.count(x)) parent[x] = x;
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (const auto& t : m.triangles()) {
    parent[find(t.vid[1])] = find(t.vid[0]);
    parent[find(t.vid[2])] = find(t.vid[0]);
  }
  std::map<int, BoundingBox> boxes;
  for (const auto& t : m.triangles())
    for (const auto& v : t.v) boxes[find(t.vid[0])].expand(v);
  std::vector<BoundingBox> out;
  for (auto& [k, b] : boxes) out.push_back(b);
  return out;
}

int count_congruent(const std::vector<BoundingBox>& boxes, const Vec3& size) {
  int n = 0;
  for (const auto& b : boxes)
    if ((b.size() - size).cwiseAbs().maxCoeff() < 1e-9) ++n;
  return n;
}

}  // namespace

TEST_CASE("unit cube model") {
  const Model cube = unit_cube();
  CHECK(cube.size() == 12);
  CHECK(cube.type() == DataType::Mesh);
  CHECK(cube.diagonal() == doctest::Approx(std::sqrt(3.0)));
}

TEST_CASE("bbox_of and its errors") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 8; ++i) pts.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  const BoundingBox b = bbox_of(std::span<const Vec3>(pts));
  CHECK(b.min.isApprox(Vec3::Zero()));
  CHECK(b.max.isApprox(Vec3::Ones()));
  CHECK_THROWS_AS(bbox_of(std::span<const Vec3>()), EmptyModelError);
  CHECK_THROWS_AS(Model::mesh({}), EmptyModelError);
}

TEST_CASE("compose matches the matrix product") {
  const RigidTransform t{Eigen::AngleAxisd(0.3, Vec3(1, 2, 3).normalized()).toRotationMatrix(), Vec3(1, -2, 0.5)};
  CHECK(compose(t, RigidTransform::identity()).approx_equal(t, 1e-15));
  CHECK(compose(RigidTransform::identity(), t).approx_equal(t, 1e-15));

  const auto rz = RigidTransform::rotate(Vec3::UnitZ(), std::numbers::pi / 2);
  Mat3 expected;
  expected << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  CHECK(compose(rz, rz).rotation.isApprox(expected, 1e-12));

  const RigidTransform u{Eigen::AngleAxisd(-1.1, Vec3::UnitX()).toRotationMatrix(), Vec3(0, 3, 1)};
  const RigidTransform v = RigidTransform::translate(Vec3(2, 2, 2));
  CHECK(compose(compose(t, u), v).approx_equal(compose(t, compose(u, v)), 1e-12));
  CHECK(compose(t, t.inverse()).approx_equal(RigidTransform::identity(), 1e-12));
  CHECK(t.is_valid());

  Eigen::Matrix4d mt = Eigen::Matrix4d::Identity(), mu = Eigen::Matrix4d::Identity();
  mt.block<3, 3>(0, 0) = t.rotation;
  mt.block<3, 1>(0, 3) = t.translation;
  mu.block<3, 3>(0, 0) = u.rotation;
  mu.block<3, 1>(0, 3) = u.translation;
  const Eigen::Matrix4d prod = mt * mu;
  const RigidTransform c = compose(t, u);
  CHECK(c.rotation.isApprox(prod.block<3, 3>(0, 0), 1e-12));
  CHECK(c.translation.isApprox(prod.block<3, 1>(0, 3), 1e-12));
}

TEST_CASE("grid model contains r*c congruent copies") {
  SUBCASE("facade 3x2") {
    const Model m = facade_fixture();
    const auto boxes = connected_boxes(m);
    CHECK(boxes.size() == 31);
    CHECK(count_congruent(boxes, Vec3(1.2, 1.6, 0.2)) == 6);
    CHECK(count_congruent(boxes, Vec3(0.5, 0.7, 0.1)) == 24);
    CHECK(m.bbox().max.isApprox(Vec3(5.4, 8.0, 0.6), 1e-12));
  }
  SUBCASE("1x1") {
    const Model m = generate_grid_model(1, 1, unit_cube(), Vec3(2, 2, 0));
    CHECK(connected_boxes(m).size() == 2);
  }
  SUBCASE("10x10 quads") {
    const Model m = quad_grid(10, 10);
    CHECK(m.size() == 200 + 12);
    const auto boxes = connected_boxes(m);
    CHECK(count_congruent(boxes, Vec3(1, 1, 0)) == 100);
    // Every cell lies inside the wall box.
    BoundingBox wall;
    for (const auto& b : boxes)
      if (b.volume() > wall.volume() || wall.empty()) wall = b;
    for (const auto& b : boxes) CHECK(wall.contains(b, 1e-12));
  }
  SUBCASE("shuffled order keeps geometry") {
    const Model a = facade_fixture(0), b = facade_fixture(42);
    CHECK(a.size() == b.size());
    CHECK(a.bbox().min.isApprox(b.bbox().min));
    CHECK(a.bbox().max.isApprox(b.bbox().max));
  }
  CHECK_THROWS_AS(generate_grid_model(0, 2, unit_cube(), Vec3(2, 2, 0)), ValidationError);
}

TEST_CASE("displace_vertices") {
  const Model cube = unit_cube();
  SUBCASE("rho 0 is identity") {
    const Model same = displace_vertices(cube, 0.0, 7);
    for (std::size_t i = 0; i < cube.size(); ++i)
      for (int k = 0; k < 3; ++k) CHECK(same.triangles()[i].v[k] == cube.triangles()[i].v[k]);
  }
  SUBCASE("offsets are bounded and non-zero") {
    for (double rho : {0.001, 0.01}) {
      const Model d = displace_vertices(cube, rho, 7);
      CHECK(d.size() == cube.size());
      double maxOff = 0.0, minOff = 1e300;
      for (std::size_t i = 0; i < cube.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
          const double off = (d.triangles()[i].v[k] - cube.triangles()[i].v[k]).norm();
          maxOff = std::max(maxOff, off);
          minOff = std::min(minOff, off);
          CHECK(d.triangles()[i].vid[k] == cube.triangles()[i].vid[k]);
        }
      }
      CHECK(maxOff <= rho * std::sqrt(3.0) + 1e-15);
      CHECK(minOff > 0.0);
    }
  }
  SUBCASE("shared vertices move together") {
    const Model d = displace_vertices(cube, 0.01, 3);
    std::map<int, Vec3> seen;
    for (const auto& t : d.triangles())
      for (int k = 0; k < 3; ++k) {
        auto [it, inserted] = seen.emplace(t.vid[k], t.v[k]);
        if (!inserted) CHECK(it->second == t.v[k]);
      }
  }
  SUBCASE("clouds are rejected") {
    CHECK_THROWS_AS(displace_vertices(sphere_cloud(), 0.01, 1), UnsupportedTypeError);
  }
}

TEST_CASE("frame_for places the local box at the origin") {
  std::vector<Vec3> pts{{1, 1, 1}, {2, 3, 1.5}, {1.5, 2, 4}};
  const Mat3 r = Eigen::AngleAxisd(0.7, Vec3::UnitZ()).toRotationMatrix();
  Vec3 size;
  const RigidTransform f = frame_for(pts, r, &size);
  const RigidTransform inv = f.inverse();
  for (const auto& p : pts) {
    const Vec3 q = inv.apply(p);
    CHECK((q.array() >= -1e-12).all());
    CHECK((q.array() <= size.array() + 1e-12).all());
  }
}

TEST_CASE("round_significant") {
  CHECK(round_significant(1.23456789012345) == 1.23456789);
  CHECK(round_significant(-0.0) == 0.0);
  CHECK(!std::signbit(round_significant(-0.0)));
  CHECK(round_significant(123456789012.0) == 123456789000.0);
}
