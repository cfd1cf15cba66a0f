#pragma once

#include "gproc/geometry.hpp"

#include <array>
#include <string_view>

namespace gproc {

struct ShapeParams {
  double geo = 0.9;   // geometric similarity threshold
  double top = 0.5;   // topological similarity threshold
  double den = 0.0;   // mesh: relative size below which a part merges into its container; cloud: min points per cluster
  double dir = 0.35;  // max mean normal deviation (radians)
  double num = 1e9;   // mesh: max component count; cloud: max plane-extraction iterations
};

struct TreeParams {
  double sub = 0.0;   // tolerated fraction of per-level node-count mismatch
  double sym = 1.0;   // label-match strictness (1 = all labels must agree)
  double ele = 0.1;   // relative element-count tolerance
  double box = 0.05;  // bbox extent tolerance relative to the larger diagonal
};

struct PatternParams {
  double pat = 0.05;  // lattice residual tolerance relative to the step length
  double ins = 0.05;  // transform distance for averaging corresponding instances
};

/// The full parameter vector, 11 dimensions in a fixed order.
struct ParamVector {
  static constexpr int kDims = 11;
  ShapeParams shape;
  TreeParams tree;
  PatternParams pattern;

  std::array<double, kDims> to_array() const;
  static ParamVector from_array(const std::array<double, kDims>& a);
  static const std::array<std::string_view, kDims>& names();
  /// Index of `name` ("geo", "top", ...), -1 if unknown.
  static int index_of(std::string_view name);
};

struct ParamBounds {
  std::array<double, ParamVector::kDims> lo{};
  std::array<double, ParamVector::kDims> hi{};
  // Dimensions searched on a logarithmic scale by the optimizer.
  std::array<bool, ParamVector::kDims> logScale{};

  bool contains(const ParamVector& p, double tol = 1e-12) const;
  ParamVector clamp(const ParamVector& p) const;
};

/// Default bounds for a model: similarity thresholds in [0,1], dir in [0, pi/2],
/// num in [1, N_elements], den in [0, 0.5] (mesh) or [0, N/10] points (cloud).
ParamBounds default_bounds(const Model& model);
ParamVector default_params(const Model& model);

}  // namespace gproc
