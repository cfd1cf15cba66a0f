#include "gproc/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace gproc {

void append_hexahedron(std::vector<Triangle>& out, const std::array<Vec3, 8>& c, int& nextVid) {
  static constexpr int faces[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                       {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  for (const auto& f : faces) {
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      t.v[k] = c[f[k]];
      t.vid[k] = nextVid + f[k];
    }
    out.push_back(t);
  }
  nextVid += 8;
}

void append_box(std::vector<Triangle>& out, const Vec3& min, const Vec3& max, int& nextVid) {
  append_hexahedron(out, BoundingBox::of_corners(min, max).corners(), nextVid);
}

Model box_model(const Vec3& min, const Vec3& max) {
  std::vector<Triangle> tris;
  int vid = 0;
  append_box(tris, min, max, vid);
  return Model::mesh(std::move(tris));
}

Model unit_cube() { return box_model(Vec3::Zero(), Vec3::Ones()); }

namespace {

int max_vid(const std::vector<Triangle>& tris) {
  int m = -1;
  for (const auto& t : tris)
    for (int v : t.vid) m = std::max(m, v);
  return m;
}

// Appends `cell` transformed by `xf`, remapping vertex ids past `nextVid`.
void place(std::vector<Triangle>& out, const std::vector<Triangle>& cell, const RigidTransform& xf, int& nextVid) {
  for (const auto& src : cell) {
    Triangle t;
    for (int k = 0; k < 3; ++k) {
      t.v[k] = xf.apply(src.v[k]);
      t.vid[k] = src.vid[k] >= 0 ? src.vid[k] + nextVid : -1;
    }
    out.push_back(t);
  }
  nextVid += max_vid(cell) + 1;
}

std::vector<Triangle> window_triangles(double height, int paneRows, int paneCols, int skipPane) {
  std::vector<Triangle> tris;
  int vid = 0;
  append_box(tris, Vec3(0, 0, 0), Vec3(1.2, height, 0.2), vid);
  const double pw = 1.0 / paneCols;
  const double ph = (height - 0.2) / paneRows;
  int pane = 0;
  for (int r = 0; r < paneRows; ++r) {
    for (int c = 0; c < paneCols; ++c, ++pane) {
      if (pane == skipPane) continue;
      const Vec3 lo(0.1 + c * pw, 0.1 + r * ph, 0.05);
      append_box(tris, lo, lo + Vec3(pw, ph, 0.1), vid);
    }
  }
  return tris;
}

struct FacadeBuilder {
  std::vector<Triangle> tris;
  int vid = 0;

  void wall(const Vec3& max) { append_box(tris, Vec3::Zero(), max, vid); }
  void add(const std::vector<Triangle>& cell, const Vec3& at) { place(tris, cell, RigidTransform::translate(at), vid); }
  Model build() { return Model::mesh(std::move(tris)); }
};

Vec3 facade_slot(int row, int col) { return Vec3(1.0 + 2.2 * col, 1.0 + 2.2 * row, 0.2); }

std::array<Vec3, 8> asymmetric_block(const Vec3& size) {
  auto c = BoundingBox::of_corners(Vec3::Zero(), size).corners();
  for (int i = 4; i < 8; ++i) c[i].x() += 0.25 * size.x();
  c[7].z() += 0.3 * size.z();
  return c;
}

std::array<Vec3, 8> transformed(const std::array<Vec3, 8>& c, const RigidTransform& xf) {
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) out[i] = xf.apply(c[i]);
  return out;
}

}  // namespace

Model generate_grid_model(int rows, int cols, const Model& cell, const Vec3& spacing, std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw ValidationError("/rows", "grid dimensions must be positive");
  if (!cell.is_mesh()) throw UnsupportedTypeError("grid cells must be meshes");
  const BoundingBox cb = cell.bbox();
  const Vec3 s = cb.size();
  double margin = std::max({spacing.x() - s.x(), spacing.y() - s.y(), s.z()});
  margin = std::max(margin, 0.1 * std::max(s.x(), s.y()));
  const double wallDepth = std::max(3.0 * s.z(), 0.1 * margin);
  const double z0 = 0.5 * (wallDepth - s.z()) + spacing.z();

  FacadeBuilder b;
  b.wall(Vec3(2 * margin + (cols - 1) * spacing.x() + s.x(), 2 * margin + (rows - 1) * spacing.y() + s.y(), wallDepth));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      b.add(cell.triangles(), Vec3(margin + c * spacing.x(), margin + r * spacing.y(), z0) - cb.min);
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(b.tris.begin(), b.tris.end(), rng);
  }
  return b.build();
}

Model displace_vertices(const Model& model, double rho, std::uint64_t seed) {
  if (!model.is_mesh()) throw UnsupportedTypeError("vertex displacement applies to meshes only");
  if (rho < 0) throw ValidationError("/rho", "rho must be non-negative");
  if (rho == 0) return model;
  const double magnitude = rho * model.diagonal();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::map<int, Vec3> byId;
  std::map<std::array<double, 3>, Vec3> byPos;
  auto offset = [&]() {
    Vec3 d;
    do {
      d = Vec3(normal(rng), normal(rng), normal(rng));
    } while (d.norm() < 1e-12);
    return Vec3(d.normalized() * magnitude * (1.0 - unit(rng)));
  };

  std::vector<Triangle> tris = model.triangles();
  for (auto& t : tris) {
    for (int k = 0; k < 3; ++k) {
      Vec3 d;
      if (t.vid[k] >= 0) {
        auto it = byId.find(t.vid[k]);
        d = it != byId.end() ? it->second : byId.emplace(t.vid[k], offset()).first->second;
      } else {
        const std::array<double, 3> key{t.v[k].x(), t.v[k].y(), t.v[k].z()};
        auto it = byPos.find(key);
        d = it != byPos.end() ? it->second : byPos.emplace(key, offset()).first->second;
      }
      t.v[k] += d;
    }
  }
  return Model::mesh(std::move(tris));
}

Model window_cell(double height, int paneRows, int paneCols) {
  return Model::mesh(window_triangles(height, paneRows, paneCols, -1));
}

Model facade_fixture(std::uint64_t seed) { return generate_grid_model(3, 2, window_cell(), Vec3(2.2, 2.2, 0), seed); }

Model plain_window_grid(int rows, int cols) {
  return generate_grid_model(rows, cols, box_model(Vec3::Zero(), Vec3(1.2, 1.6, 0.2)), Vec3(2.2, 2.2, 0));
}

Model two_type_facade() {
  FacadeBuilder b;
  b.wall(Vec3(5.4, 8.3, 0.6));
  const auto normal = window_triangles(1.6, 2, 2, -1);
  const auto tall = window_triangles(1.9, 2, 2, -1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) b.add(r == 2 ? tall : normal, facade_slot(r, c));
  return b.build();
}

Model ablated_facade(int row, int col, const Vec3& offset) {
  FacadeBuilder b;
  b.wall(Vec3(5.4, 8.0, 0.6));
  const auto cell = window_triangles(1.6, 2, 2, -1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) b.add(cell, facade_slot(r, c) + (r == row && c == col ? offset : Vec3::Zero()));
  return b.build();
}

Model missing_pane_facade() {
  FacadeBuilder b;
  b.wall(Vec3(5.4, 8.0, 0.6));
  const auto cell = window_triangles(1.6, 2, 2, -1);
  const auto missing = window_triangles(1.6, 2, 2, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) b.add(r == 0 && c == 0 ? missing : cell, facade_slot(r, c));
  return b.build();
}

Model scaled_window_facade() {
  FacadeBuilder b;
  b.wall(Vec3(6.6, 9.6, 0.6));
  const auto cell = window_triangles(1.6, 2, 2, -1);
  auto big = cell;
  for (auto& t : big)
    for (auto& v : t.v) v = Vec3(2.0 * v.x(), 2.0 * v.y(), v.z());
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) b.add(r == 2 && c == 1 ? big : cell, facade_slot(r, c));
  return b.build();
}

Model quad_grid(int rows, int cols) {
  std::vector<Triangle> quad(2);
  quad[0].v = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0)};
  quad[0].vid = {0, 1, 2};
  quad[1].v = {Vec3(0, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  quad[1].vid = {0, 2, 3};
  return generate_grid_model(rows, cols, Model::mesh(quad), Vec3(1.5, 1.5, 0));
}

Model rotational_fixture(int count, double stepDeg) {
  std::vector<Triangle> tris;
  int vid = 0;
  append_box(tris, Vec3(-3, -3, 0), Vec3(3, 3, 0.1), vid);
  const auto block = asymmetric_block(Vec3(0.8, 0.4, 0.6));
  for (int k = 0; k < count; ++k) {
    const RigidTransform xf = RigidTransform::rotate(Vec3::UnitZ(), k * stepDeg * std::numbers::pi / 180.0) *
                              RigidTransform::translate(Vec3(1.8, -0.2, 0.1));
    append_hexahedron(tris, transformed(block, xf), vid);
  }
  return Model::mesh(std::move(tris));
}

Model tower_fixture(int floors, double twistDeg) {
  std::vector<Triangle> tris;
  int vid = 0;
  const auto slab = BoundingBox::of_corners(Vec3(-2, -1, 0), Vec3(2, 1, 1)).corners();
  const auto win = asymmetric_block(Vec3(0.8, 0.3, 0.5));
  for (int k = 0; k < floors; ++k) {
    const RigidTransform xf = RigidTransform::translate(Vec3(0, 0, 1.2 * k)) *
                              RigidTransform::rotate(Vec3::UnitZ(), k * twistDeg * std::numbers::pi / 180.0);
    append_hexahedron(tris, transformed(slab, xf), vid);
    append_hexahedron(tris, transformed(win, xf * RigidTransform::translate(Vec3(-1.6, -0.8, 0.2))), vid);
    append_hexahedron(tris, transformed(win, xf * RigidTransform::translate(Vec3(0.4, -0.8, 0.2))), vid);
  }
  return Model::mesh(std::move(tris));
}

Model irregular_shapes() {
  std::vector<Triangle> tris;
  int vid = 0;
  const auto a = asymmetric_block(Vec3(1.0, 0.6, 0.5));
  auto b = BoundingBox::of_corners(Vec3::Zero(), Vec3(0.4, 0.4, 1.4)).corners();
  for (int i = 4; i < 8; ++i) b[i] += Vec3(0.15, 0.1, 0);
  auto c = BoundingBox::of_corners(Vec3::Zero(), Vec3(1.2, 0.5, 0.3)).corners();
  c[6].z() += 0.5;
  c[7].z() += 0.5;
  const std::array<std::pair<const std::array<Vec3, 8>*, int>, 3> kinds{{{&a, 5}, {&b, 4}, {&c, 3}}};
  const double angles[] = {0, 20, 75, 130, 200, 260, 310, 45, 100, 170, 230, 290};
  int slot = 0;
  for (const auto& [shape, n] : kinds) {
    for (int i = 0; i < n; ++i, ++slot) {
      const Vec3 at(2.5 * (slot % 4), 2.5 * (slot / 4), 0.0);
      const RigidTransform xf =
          RigidTransform::translate(at) * RigidTransform::rotate(Vec3::UnitZ(), angles[slot] * std::numbers::pi / 180.0);
      append_hexahedron(tris, transformed(*shape, xf), vid);
    }
  }
  return Model::mesh(std::move(tris));
}

// ---------------------------------------------------------------------------

std::vector<Point> sample_box_surface(const Vec3& min, const Vec3& max, double step, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vec3 s = max - min;
  std::vector<Point> out;
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    const int n = std::max(1, static_cast<int>(std::lround(s[u] * s[v] / (step * step))));
    for (int side = 0; side < 2; ++side) {
      for (int i = 0; i < n; ++i) {
        Point p;
        p.p[axis] = side ? max[axis] : min[axis];
        p.p[u] = min[u] + unit(rng) * s[u];
        p.p[v] = min[v] + unit(rng) * s[v];
        Vec3 nrm = Vec3::Zero();
        nrm[axis] = side ? 1.0 : -1.0;
        p.normal = nrm;
        out.push_back(p);
      }
    }
  }
  return out;
}

std::vector<Point> sample_sphere(const Vec3& center, double radius, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Point> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    Vec3 d(normal(rng), normal(rng), normal(rng));
    if (d.norm() < 1e-12) continue;
    d.normalize();
    out.push_back(Point{center + radius * d, d});
  }
  return out;
}

Model two_cube_cloud(std::uint64_t seed) {
  auto pts = sample_box_surface(Vec3::Zero(), Vec3::Ones(), 0.05, seed);
  auto second = sample_box_surface(Vec3(3, 0, 0), Vec3(4, 1, 1), 0.05, seed + 1);
  pts.insert(pts.end(), second.begin(), second.end());
  return Model::cloud(std::move(pts));
}

Model sphere_cloud(std::uint64_t seed) { return Model::cloud(sample_sphere(Vec3::Zero(), 1.0, 3000, seed)); }

Model outlier_cloud(double fraction, std::uint64_t seed) {
  auto pts = two_cube_cloud(seed).points();
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> x(-1.0, 5.0), y(-1.0, 2.0), z(-1.0, 2.0);
  const int n = static_cast<int>(std::lround(fraction * static_cast<double>(pts.size())));
  const BoundingBox inner = BoundingBox::of_corners(Vec3(-0.15, -0.15, -0.15), Vec3(4.15, 1.15, 1.15));
  for (int i = 0; i < n;) {
    const Vec3 p(x(rng), y(rng), z(rng));
    // Keep outliers clear of the cube surfaces so they stay isolated.
    if (inner.contains(p)) continue;
    pts.push_back(Point{p, std::nullopt});
    ++i;
  }
  return Model::cloud(std::move(pts));
}

AblationFixture ablation_cloud(int count, double holeFraction, std::uint64_t seed) {
  const BoundingBox lower = BoundingBox::of_corners(Vec3(0, 0, 0), Vec3(1.0, 0.6, 0.6));
  const BoundingBox upper = BoundingBox::of_corners(Vec3(0, 0, 0.6), Vec3(0.4, 0.6, 1.2));
  std::vector<Point> inst;
  auto keepOutside = [&](const std::vector<Point>& pts, const BoundingBox& other) {
    for (const auto& p : pts) {
      const bool inside = (p.p.array() > other.min.array() + 1e-9).all() && (p.p.array() < other.max.array() - 1e-9).all();
      const bool onShared = std::abs(p.p.z() - 0.6) < 1e-12 && p.p.x() < 0.4;
      if (!inside && !onShared) inst.push_back(p);
    }
  };
  keepOutside(sample_box_surface(lower.min, lower.max, 0.03, seed), upper);
  keepOutside(sample_box_surface(upper.min, upper.max, 0.03, seed + 1), lower);

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : inst) centroid += p.p;
  centroid /= static_cast<double>(inst.size());
  std::vector<double> angle(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    angle[i] = std::atan2(inst[i].p.y() - centroid.y(), inst[i].p.x() - centroid.x()) + std::numbers::pi;
  }

  std::vector<Vec3> offsets;
  std::vector<Point> holey, full;
  const std::size_t removeCount = static_cast<std::size_t>(std::lround(holeFraction * static_cast<double>(inst.size())));
  for (int k = 0; k < count; ++k) {
    const double fy = std::fmod(0.618034 * k, 1.0), fz = std::fmod(0.414214 * k, 1.0);
    const Vec3 offset(2.5 * k, 0.4 * fy, 0.4 * fz);
    offsets.push_back(offset);
    const double start = 2.0 * std::numbers::pi * k / count;
    std::vector<std::size_t> order(inst.size());
    std::iota(order.begin(), order.end(), 0);
    auto rel = [&](std::size_t i) { return std::fmod(angle[i] - start + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rel(a) < rel(b); });
    std::vector<char> removed(inst.size(), 0);
    for (std::size_t i = 0; i < removeCount; ++i) removed[order[i]] = 1;
    for (std::size_t i = 0; i < inst.size(); ++i) {
      Point p = inst[i];
      p.p += offset;
      full.push_back(p);
      if (!removed[i]) holey.push_back(p);
    }
  }
  return AblationFixture{Model::cloud(std::move(holey)), Model::cloud(std::move(full)), std::move(offsets), std::move(inst)};
}

std::vector<NamedModel> fixture_corpus() {
  std::vector<NamedModel> out;
  out.push_back({"facade", facade_fixture()});
  out.push_back({"two_type_facade", two_type_facade()});
  out.push_back({"plain_window_grid", plain_window_grid(2, 3)});
  out.push_back({"ablated_facade", ablated_facade(1, 1, Vec3(0.3, 0.0, 0.2))});
  out.push_back({"missing_pane_facade", missing_pane_facade()});
  out.push_back({"scaled_window_facade", scaled_window_facade()});
  out.push_back({"quad_grid", quad_grid(10, 10)});
  out.push_back({"rotational", rotational_fixture()});
  out.push_back({"tower", tower_fixture()});
  out.push_back({"irregular_shapes", irregular_shapes()});
  out.push_back({"unit_cube", unit_cube()});
  out.push_back({"two_cube_cloud", two_cube_cloud()});
  return out;
}

}  // namespace gproc
