#pragma once

#include "gproc/geometry.hpp"
#include "gproc/instance_tree.hpp"
#include "gproc/params.hpp"

#include <json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace gproc {

/// One instance of a repeated part: its points in world coordinates and the
/// component frame that places its local box.
struct ConsensusMember {
  int node = -1;
  std::vector<Point> points;
  RigidTransform frame;
};

struct ConsensusModel {
  int label = 0;
  int medoid = -1;                               // node id of the reference member
  std::vector<Point> points;                     // merged cloud in the medoid's local frame
  std::map<int, RigidTransform> alignment;       // node id -> world to canonical frame
  std::map<int, double> residual;                // node id -> alignment residual
  std::map<int, double> coverage;                // node id -> fraction of the consensus cells the member covers
  std::vector<int> excluded;                     // members rejected by the residual bound
  double residualBound = 0.0;
  std::size_t maxMemberPoints = 0;
};

struct ConsensusOptions {
  double residualFactor = 2.0;  // exclusion bound in units of the medoid's point spacing
  double cellFactor = 4.0;      // resampling cell edge in units of the point spacing
  double keep = 0.8;            // trimmed-ICP inlier fraction (members have holes)
};

/// Aligns members to the medoid (`medoidIndex` into members, or -1 to pick the
/// member closest to all others), merges the aligned points and resamples the
/// union so every cell keeps the median member point count. Throws
/// ValidationError for an empty member list.
ConsensusModel build_consensus(std::span<const ConsensusMember> members, int label, int medoidIndex = -1,
                               const ConsensusOptions& options = {});

/// Consensus models for every label with at least two members in the tree.
std::vector<ConsensusModel> build_consensus_models(const Model& cloud, const InstanceTree& tree,
                                                   const std::vector<RepresentativeInstance>& reps,
                                                   const ComponentSet& set, const ConsensusOptions& options = {});

/// Replaces every aligned member by its consensus model placed in the member's
/// slot. Other elements pass through. An input point whose coverage voxel
/// (edge `voxel`, default 0.01 * diagonal) would otherwise be left empty is kept.
Model apply_consensus(const Model& cloud, const InstanceTree& tree, const ComponentSet& set,
                      const std::vector<ConsensusModel>& models, double voxel = 0.0);

struct CompletionReport {
  std::size_t pointsBefore = 0;
  std::size_t pointsAfter = 0;
  double gainPercent = 0.0;
  double voxel = 0.0;
  double coverageKept = 1.0;                  // fraction of the input's occupied voxels still occupied
  std::map<int, double> labelCoverageBefore;  // label -> mean member coverage of its consensus model
  std::vector<int> densityBefore;             // histogram of neighbour counts
  std::vector<int> densityAfter;
  double densityRadius = 0.0;
  double medianDensityBefore = 0.0;
  double medianDensityAfter = 0.0;
  bool lowDensityWarning = false;             // median local density dropped by more than 20%

  nlohmann::ordered_json to_json() const;
  std::string to_text() const;
};

/// Point-count gain and coverage kept, with local density histograms.
CompletionReport completion_stats(const Model& before, const Model& after,
                                  const std::vector<ConsensusModel>& models = {}, double voxel = 0.0);

/// Fraction of the voxels occupied by `reference` that `cloud` also occupies.
/// The grid is anchored at the reference's bbox minimum.
double voxel_coverage(const Model& reference, const Model& cloud, double voxel);

struct CompletionResult {
  ComponentSet components;
  InstanceTree tree;
  std::vector<ConsensusModel> models;
  Model completed;
  CompletionReport report;
};

/// Segmentation, instance tree and labels at `theta`, then consensus completion.
CompletionResult complete_cloud(const Model& cloud, const ParamVector& theta, std::uint64_t seed = 0,
                                const ConsensusOptions& options = {});

}  // namespace gproc
