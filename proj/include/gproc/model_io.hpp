#pragma once

#include "gproc/geometry.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gproc {

enum class FileFormat { Auto, Obj, Ply, Xyz };

FileFormat format_from_path(const std::filesystem::path& path);

/// Loads an OBJ mesh, a PLY mesh or cloud (ASCII or binary little-endian), or an
/// XYZ cloud. Point clouds without normals get k-nearest-neighbour PCA normals.
Model load_model(const std::filesystem::path& path, FileFormat hint = FileFormat::Auto);
Model parse_model(std::istream& in, FileFormat format);
Model parse_model(const std::string& text, FileFormat format);

/// Per-element colouring for exports: one material / colour per label.
struct ElementLabels {
  std::vector<int> label;  // per element, -1 = unlabeled
  std::string mtlName;     // OBJ: referenced material library; empty = none
};

void write_obj(std::ostream& out, const Model& mesh, const ElementLabels* labels = nullptr);
void write_mtl(std::ostream& out, int labelCount);
void write_ply(std::ostream& out, const Model& model, const ElementLabels* labels = nullptr);
void write_xyz(std::ostream& out, const Model& cloud);

/// Writes by extension (.obj/.ply/.xyz); an OBJ with labels also gets a sibling .mtl.
void save_model(const std::filesystem::path& path, const Model& model, const ElementLabels* labels = nullptr);
std::string to_obj_string(const Model& mesh);

/// RGB in [0,1] for a label id; stable palette.
Vec3 label_color(int label);

/// Estimates unit normals by PCA over the k nearest neighbours.
std::vector<Point> estimate_normals(std::vector<Point> points, int k = 16);

}  // namespace gproc
