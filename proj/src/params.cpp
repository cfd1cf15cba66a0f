#include "gproc/params.hpp"

#include <algorithm>
#include <numbers>

namespace gproc {

std::array<double, ParamVector::kDims> ParamVector::to_array() const {
  return {shape.geo, shape.top, shape.den, shape.dir, shape.num, tree.sub,
          tree.sym,  tree.ele,  tree.box,  pattern.pat, pattern.ins};
}

ParamVector ParamVector::from_array(const std::array<double, kDims>& a) {
  ParamVector p;
  p.shape = {a[0], a[1], a[2], a[3], a[4]};
  p.tree = {a[5], a[6], a[7], a[8]};
  p.pattern = {a[9], a[10]};
  return p;
}

const std::array<std::string_view, ParamVector::kDims>& ParamVector::names() {
  static const std::array<std::string_view, kDims> n{"geo", "top", "den", "dir", "num", "sub",
                                                     "sym", "ele", "box", "pat", "ins"};
  return n;
}

int ParamVector::index_of(std::string_view name) {
  const auto& n = names();
  for (int i = 0; i < kDims; ++i)
    if (n[i] == name) return i;
  return -1;
}

bool ParamBounds::contains(const ParamVector& p, double tol) const {
  const auto a = p.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) {
    if (!(a[i] >= lo[i] - tol && a[i] <= hi[i] + tol)) return false;
  }
  return true;
}

ParamVector ParamBounds::clamp(const ParamVector& p) const {
  auto a = p.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) a[i] = std::clamp(a[i], lo[i], hi[i]);
  return ParamVector::from_array(a);
}

ParamBounds default_bounds(const Model& model) {
  ParamBounds b;
  const double n = static_cast<double>(model.size());
  b.lo = {0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0};
  b.hi = {1, 1, 0.5, std::numbers::pi / 2, std::max(1.0, n), 1, 1, 1, 1, 0.5, 1};
  if (!model.is_mesh()) b.hi[2] = std::max(1.0, n / 10.0);
  b.logScale.fill(false);
  b.logScale[4] = true;
  return b;
}

ParamVector default_params(const Model& model) {
  ParamVector p;
  p.shape.num = std::max(1.0, static_cast<double>(model.size()));
  if (!model.is_mesh()) p.shape.den = std::min(10.0, std::max(1.0, static_cast<double>(model.size()) / 10.0));
  return p;
}

}  // namespace gproc
