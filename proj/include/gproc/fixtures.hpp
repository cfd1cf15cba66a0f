#pragma once

#include "gproc/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gproc {

/// Appends the 12 triangles of an axis-aligned box with fresh vertex ids.
void append_box(std::vector<Triangle>& out, const Vec3& min, const Vec3& max, int& nextVid);
/// Appends a closed hexahedron given its 8 corners in `BoundingBox::corners()` order.
void append_hexahedron(std::vector<Triangle>& out, const std::array<Vec3, 8>& c, int& nextVid);

Model box_model(const Vec3& min, const Vec3& max);
Model unit_cube();

/// rows x cols translated copies of `cell` (step spacing.x per column, spacing.y
/// per row) in front of a backing wall slab whose bbox contains every copy.
/// spacing.z shifts the copies along z relative to the wall's middle third.
/// A non-zero seed shuffles the output triangle order (geometry is unchanged).
Model generate_grid_model(int rows, int cols, const Model& cell, const Vec3& spacing, std::uint64_t seed = 0);

/// Moves every distinct vertex by a uniformly oriented offset of length in (0, rho*D].
Model displace_vertices(const Model& model, double rho, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Named fixtures used by tests and the acceptance suite
// ---------------------------------------------------------------------------

/// 1.2 x 1.6 x 0.2 frame holding 2 x 2 abutting 0.5 x 0.7 x 0.1 panes.
Model window_cell(double height = 1.6, int paneRows = 2, int paneCols = 2);
/// 3 x 2 windows with 2 x 2 panes each on a 5.4 x 8 x 0.6 wall.
Model facade_fixture(std::uint64_t seed = 0);
/// Like the facade but windows carry no panes.
Model plain_window_grid(int rows, int cols);
/// Facade whose top row has taller windows (1.9 high) with taller panes.
Model two_type_facade();
/// Facade with window (row, col) moved by `offset`.
Model ablated_facade(int row, int col, const Vec3& offset);
/// Facade with one pane removed from window (0, 0).
Model missing_pane_facade();
/// Facade on a larger wall with the top-right window scaled 2x about its min corner.
Model scaled_window_facade();
/// 10 x 10 grid of unit quads (2 triangles each) on a wall.
Model quad_grid(int rows = 10, int cols = 10);
/// `count` asymmetric hexahedra placed at `stepDeg` increments about the z axis on a base slab.
Model rotational_fixture(int count = 6, double stepDeg = 30.0);
/// Stacked floor slabs, each rotated by `twistDeg` more than the one below and
/// carrying two asymmetric window blocks.
Model tower_fixture(int floors = 5, double twistDeg = 15.0);
/// Three kinds of irregular solids: 5, 4 and 3 copies scattered without containment.
Model irregular_shapes();

// Point clouds -------------------------------------------------------------

/// Uniformly sampled surface of an axis-aligned box (spacing ~ `step`).
std::vector<Point> sample_box_surface(const Vec3& min, const Vec3& max, double step, std::uint64_t seed);
std::vector<Point> sample_sphere(const Vec3& center, double radius, int count, std::uint64_t seed);

Model two_cube_cloud(std::uint64_t seed = 1);
Model sphere_cloud(std::uint64_t seed = 1);
/// Two cubes plus `fraction` * N uniformly scattered outliers.
Model outlier_cloud(double fraction = 0.05, std::uint64_t seed = 1);

struct AblationFixture {
  Model cloud;                      // instances with holes
  Model groundTruth;                // instances without holes
  std::vector<Vec3> offsets;        // instance placement (translation only)
  std::vector<Point> instance;      // hole-free instance in local coordinates
};
/// `count` translated copies of an asymmetric L-block surface, each missing a
/// 20% angular wedge starting at a different angle.
AblationFixture ablation_cloud(int count = 6, double holeFraction = 0.2, std::uint64_t seed = 3);

struct NamedModel {
  std::string name;
  Model model;
};
/// The 12 test models: the grid variants, rotational and helical arrangements,
/// unrelated shapes, a single box and a two-cube point cloud.
std::vector<NamedModel> fixture_corpus();

}  // namespace gproc
