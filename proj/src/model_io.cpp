#include "gproc/model_io.hpp"

#include "gproc/spatial.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace gproc {

namespace fs = std::filesystem;

FileFormat format_from_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".obj") return FileFormat::Obj;
  if (ext == ".ply") return FileFormat::Ply;
  if (ext == ".xyz" || ext == ".txt" || ext == ".pts") return FileFormat::Xyz;
  return FileFormat::Auto;
}

namespace {

bool parse_double(const std::string& tok, double& out) {
  if (tok.empty()) return false;
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size() && std::isfinite(out);
}

Model finish_mesh(std::vector<Triangle> tris) {
  if (tris.empty()) throw EmptyModelError("file contains no faces");
  BoundingBox box;
  for (const auto& t : tris)
    for (const auto& v : t.v) box.expand(v);
  const double tol = 1e-12 * box.diagonal() * box.diagonal();
  std::erase_if(tris, [&](const Triangle& t) { return !(t.area() > tol); });
  if (tris.empty()) throw EmptyModelError("file contains only degenerate faces");
  return Model::mesh(std::move(tris));
}

Model finish_cloud(std::vector<Point> pts) {
  if (pts.empty()) throw EmptyModelError("file contains no points");
  const bool haveNormals = std::all_of(pts.begin(), pts.end(), [](const Point& p) { return p.normal.has_value(); });
  if (!haveNormals) pts = estimate_normals(std::move(pts));
  return Model::cloud(std::move(pts));
}

Model parse_obj(std::istream& in) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::string a, b, c;
      ls >> a >> b >> c;
      Vec3 p;
      if (!parse_double(a, p.x()) || !parse_double(b, p.y()) || !parse_double(c, p.z())) {
        throw ParseError("malformed vertex '" + line + "'", lineNo);
      }
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        char* end = nullptr;
        const long v = std::strtol(head.c_str(), &end, 10);
        if (head.empty() || end != head.c_str() + head.size() || v == 0) {
          throw ParseError("malformed face index '" + tok + "'", lineNo);
        }
        const long resolved = v > 0 ? v - 1 : static_cast<long>(verts.size()) + v;
        if (resolved < 0 || resolved >= static_cast<long>(verts.size())) {
          throw ParseError("face references missing vertex " + std::to_string(v), lineNo);
        }
        idx.push_back(static_cast<int>(resolved));
      }
      if (idx.size() < 3) throw ParseError("face with fewer than 3 vertices", lineNo);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        Triangle t;
        t.v = {verts[idx[0]], verts[idx[k]], verts[idx[k + 1]]};
        t.vid = {idx[0], idx[k], idx[k + 1]};
        tris.push_back(t);
      }
    }
    // vt, vn, g, o, usemtl, mtllib, s: ignored
  }
  if (tris.empty() && !verts.empty()) throw EmptyModelError("OBJ has vertices but no faces");
  return finish_mesh(std::move(tris));
}

Model parse_xyz(std::istream& in) {
  std::vector<Point> pts;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      if (vals.empty() && tok[0] == '#') break;
      double v;
      if (!parse_double(tok, v)) throw ParseError("malformed number '" + tok + "'", lineNo);
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() != 3 && vals.size() != 6) {
      throw ParseError("expected 3 or 6 values, got " + std::to_string(vals.size()), lineNo);
    }
    Point p;
    p.p = Vec3(vals[0], vals[1], vals[2]);
    if (vals.size() == 6) p.normal = Vec3(vals[3], vals[4], vals[5]);
    pts.push_back(p);
  }
  return finish_cloud(std::move(pts));
}

// --- PLY ---------------------------------------------------------------------

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(const std::string& s, int line) {
  static const std::map<std::string, PlyType> types = {
      {"char", PlyType::I8},    {"int8", PlyType::I8},     {"uchar", PlyType::U8},  {"uint8", PlyType::U8},
      {"short", PlyType::I16},  {"int16", PlyType::I16},   {"ushort", PlyType::U16}, {"uint16", PlyType::U16},
      {"int", PlyType::I32},    {"int32", PlyType::I32},   {"uint", PlyType::U32},  {"uint32", PlyType::U32},
      {"float", PlyType::F32},  {"float32", PlyType::F32}, {"double", PlyType::F64}, {"float64", PlyType::F64}};
  auto it = types.find(s);
  if (it == types.end()) throw ParseError("unknown PLY type '" + s + "'", line);
  return it->second;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool isList = false;
  PlyType countType = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

double read_binary(std::istream& in, PlyType t) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(ply_size(t)))) {
    throw ParseError("unexpected end of binary PLY data", 0);
  }
  switch (t) {
    case PlyType::I8: { int8_t v; std::memcpy(&v, buf, 1); return v; }
    case PlyType::U8: return buf[0];
    case PlyType::I16: { int16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::U16: { uint16_t v; std::memcpy(&v, buf, 2); return v; }
    case PlyType::I32: { int32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::U32: { uint32_t v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::F32: { float v; std::memcpy(&v, buf, 4); return v; }
    case PlyType::F64: { double v; std::memcpy(&v, buf, 8); return v; }
  }
  return 0;
}

Model parse_ply(std::istream& in) {
  std::string line;
  int lineNo = 0;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw ParseError("missing 'ply' magic", 1);
  ++lineNo;
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    if (!std::getline(in, line)) throw ParseError("unterminated PLY header", lineNo);
    ++lineNo;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ParseError("unsupported PLY format '" + fmt + "'", lineNo);
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (!ls) throw ParseError("malformed element line", lineNo);
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError("property before element", lineNo);
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.isList = true;
        p.countType = ply_type(ct, lineNo);
        p.type = ply_type(it, lineNo);
      } else {
        p.type = ply_type(t, lineNo);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }

  std::vector<Point> pts;
  std::vector<std::vector<int>> faces;
  for (const auto& e : elements) {
    for (std::size_t r = 0; r < e.count; ++r) {
      std::vector<double> scalars(e.props.size(), 0.0);
      std::vector<int> list;
      std::istringstream ls;
      if (!binary) {
        if (!std::getline(in, line)) throw ParseError("unexpected end of PLY data", lineNo + 1);
        ++lineNo;
        ls.str(line);
      }
      auto next = [&](PlyType t) -> double {
        if (binary) return read_binary(in, t);
        std::string tok;
        double v;
        if (!(ls >> tok) || !parse_double(tok, v)) throw ParseError("malformed PLY value", lineNo);
        return v;
      };
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& p = e.props[k];
        if (p.isList) {
          const int n = static_cast<int>(next(p.countType));
          for (int j = 0; j < n; ++j) list.push_back(static_cast<int>(next(p.type)));
        } else {
          scalars[k] = next(p.type);
        }
      }
      if (e.name == "vertex") {
        Point pt;
        Vec3 n = Vec3::Zero();
        bool hasN = false;
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& name = e.props[k].name;
          if (name == "x") pt.p.x() = scalars[k];
          else if (name == "y") pt.p.y() = scalars[k];
          else if (name == "z") pt.p.z() = scalars[k];
          else if (name == "nx") { n.x() = scalars[k]; hasN = true; }
          else if (name == "ny") n.y() = scalars[k];
          else if (name == "nz") n.z() = scalars[k];
        }
        if (hasN && n.norm() > 0) pt.normal = n.normalized();
        pts.push_back(pt);
      } else if (e.name == "face") {
        faces.push_back(std::move(list));
      }
    }
  }

  if (!faces.empty()) {
    std::vector<Triangle> tris;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const auto& idx = faces[f];
      for (int i : idx)
        if (i < 0 || i >= static_cast<int>(pts.size()))
          throw ParseError("face " + std::to_string(f) + " references missing vertex", 0);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        Triangle t;
        t.v = {pts[idx[0]].p, pts[idx[k]].p, pts[idx[k + 1]].p};
        t.vid = {idx[0], idx[k], idx[k + 1]};
        tris.push_back(t);
      }
    }
    return finish_mesh(std::move(tris));
  }
  return finish_cloud(std::move(pts));
}

}  // namespace

Model parse_model(std::istream& in, FileFormat format) {
  switch (format) {
    case FileFormat::Obj: return parse_obj(in);
    case FileFormat::Ply: return parse_ply(in);
    case FileFormat::Xyz: return parse_xyz(in);
    case FileFormat::Auto: break;
  }
  throw UnsupportedTypeError("unknown model format");
}

Model parse_model(const std::string& text, FileFormat format) {
  std::istringstream in(text);
  return parse_model(in, format);
}

Model load_model(const fs::path& path, FileFormat hint) {
  const FileFormat fmt = hint == FileFormat::Auto ? format_from_path(path) : hint;
  if (fmt == FileFormat::Auto) throw UnsupportedTypeError("cannot infer format of " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return parse_model(in, fmt);
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what(), e.line());
  }
}

// ---------------------------------------------------------------------------

Vec3 label_color(int label) {
  static const double palette[][3] = {
      {0.90, 0.49, 0.13}, {0.20, 0.45, 0.80}, {0.98, 0.75, 0.45}, {0.30, 0.69, 0.29}, {0.60, 0.31, 0.64},
      {0.89, 0.10, 0.11}, {0.65, 0.81, 0.89}, {0.70, 0.70, 0.70}, {0.99, 0.85, 0.15}, {0.55, 0.34, 0.29}};
  if (label < 0) return Vec3(0.5, 0.5, 0.5);
  const auto& c = palette[label % 10];
  const double dim = 1.0 - 0.15 * static_cast<double>((label / 10) % 4);
  return Vec3(c[0], c[1], c[2]) * dim;
}

void write_mtl(std::ostream& out, int labelCount) {
  char buf[128];
  for (int l = 0; l < labelCount; ++l) {
    const Vec3 c = label_color(l);
    std::snprintf(buf, sizeof buf, "newmtl label_%d\nKd %.4f %.4f %.4f\n", l, c.x(), c.y(), c.z());
    out << buf;
  }
}

void write_obj(std::ostream& out, const Model& mesh, const ElementLabels* labels) {
  if (!mesh.is_mesh()) throw UnsupportedTypeError("OBJ export requires a mesh");
  const auto& tris = mesh.triangles();
  // Reuse shared vertex ids when every triangle carries them.
  const bool shared = std::all_of(tris.begin(), tris.end(), [](const Triangle& t) { return t.vid[0] >= 0; });
  std::map<int, int> remap;
  std::vector<std::array<int, 3>> faces(tris.size());
  std::vector<Vec3> verts;
  for (std::size_t i = 0; i < tris.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      if (shared) {
        auto [it, inserted] = remap.try_emplace(tris[i].vid[k], static_cast<int>(verts.size()));
        if (inserted) verts.push_back(tris[i].v[k]);
        faces[i][k] = it->second;
      } else {
        faces[i][k] = static_cast<int>(verts.size());
        verts.push_back(tris[i].v[k]);
      }
    }
  }
  char buf[160];
  if (labels && !labels->mtlName.empty()) out << "mtllib " << labels->mtlName << "\n";
  for (const auto& v : verts) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  int current = -2;
  for (std::size_t i = 0; i < faces.size(); ++i) {
    if (labels && i < labels->label.size() && labels->label[i] != current) {
      current = labels->label[i];
      out << "usemtl label_" << current << "\n";
    }
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", faces[i][0] + 1, faces[i][1] + 1, faces[i][2] + 1);
    out << buf;
  }
}

void write_ply(std::ostream& out, const Model& model, const ElementLabels* labels) {
  char buf[200];
  if (model.is_mesh()) {
    const auto& tris = model.triangles();
    out << "ply\nformat ascii 1.0\nelement vertex " << tris.size() * 3
        << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << tris.size()
        << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (const auto& t : tris)
      for (const auto& v : t.v) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        out << buf;
      }
    for (std::size_t i = 0; i < tris.size(); ++i) out << "3 " << 3 * i << ' ' << 3 * i + 1 << ' ' << 3 * i + 2 << "\n";
    return;
  }
  const auto& pts = model.points();
  const bool colored = labels && labels->label.size() == pts.size();
  out << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property double nx\nproperty double ny\nproperty double nz\n";
  if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const Vec3 n = p.normal.value_or(Vec3::Zero());
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.6g %.6g %.6g", p.p.x(), p.p.y(), p.p.z(), n.x(), n.y(), n.z());
    out << buf;
    if (colored) {
      const Vec3 c = label_color(labels->label[i]) * 255.0;
      out << ' ' << static_cast<int>(c.x()) << ' ' << static_cast<int>(c.y()) << ' ' << static_cast<int>(c.z());
    }
    out << "\n";
  }
}

void write_xyz(std::ostream& out, const Model& cloud) {
  if (cloud.is_mesh()) throw UnsupportedTypeError("XYZ export requires a point cloud");
  char buf[200];
  for (const auto& p : cloud.points()) {
    if (p.normal) {
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.6g %.6g %.6g\n", p.p.x(), p.p.y(), p.p.z(), p.normal->x(),
                    p.normal->y(), p.normal->z());
    } else {
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p.p.x(), p.p.y(), p.p.z());
    }
    out << buf;
  }
}

void save_model(const fs::path& path, const Model& model, const ElementLabels* labels) {
  const FileFormat fmt = format_from_path(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  switch (fmt) {
    case FileFormat::Obj: {
      if (labels) {
        ElementLabels withMtl = *labels;
        fs::path mtl = path;
        mtl.replace_extension(".mtl");
        withMtl.mtlName = mtl.filename().string();
        int count = 0;
        for (int l : labels->label) count = std::max(count, l + 1);
        std::ofstream m(mtl);
        write_mtl(m, count);
        write_obj(out, model, &withMtl);
      } else {
        write_obj(out, model);
      }
      break;
    }
    case FileFormat::Ply: write_ply(out, model, labels); break;
    case FileFormat::Xyz: write_xyz(out, model); break;
    case FileFormat::Auto: throw UnsupportedTypeError("cannot infer output format of " + path.string());
  }
}

std::string to_obj_string(const Model& mesh) {
  std::ostringstream out;
  write_obj(out, mesh);
  return out.str();
}

std::vector<Point> estimate_normals(std::vector<Point> points, int k) {
  std::vector<Vec3> pos;
  pos.reserve(points.size());
  for (const auto& p : points) pos.push_back(p.p);
  if (pos.size() < 3) {
    for (auto& p : points) p.normal = Vec3::UnitZ();
    return points;
  }
  const KdTree tree(pos);
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pos) centroid += p;
  centroid /= static_cast<double>(pos.size());
  std::vector<Vec3> nbr;
  for (auto& p : points) {
    if (p.normal) continue;
    nbr.clear();
    for (int i : tree.knn(p.p, k)) nbr.push_back(pos[i]);
    Vec3 n = principal_axes(nbr).axes.col(2);
    if (n.dot(p.p - centroid) < 0) n = -n;
    p.normal = n.normalized();
  }
  return points;
}

}  // namespace gproc
