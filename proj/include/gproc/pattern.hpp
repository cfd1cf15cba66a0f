#pragma once

#include "gproc/grammar.hpp"
#include "gproc/instance_tree.hpp"

#include <vector>

namespace gproc {

class ComponentSet;

/// Result of fitting a lattice to a set of placements.
struct LatticeFit {
  RigidTransform origin;
  std::array<int, 3> repetition{1, 1, 1};
  std::array<Vec3, 3> spacing{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::optional<RotationPattern> rotation;
  std::vector<int> cells;      // slot index per lattice cell, (a,b,c) row-major
  std::vector<int> leftovers;  // slots outside the lattice
};

/// Deterministic hypothesize-and-verify lattice search. Candidate axes are the
/// most frequent clustered pairwise translation differences; every 1-3 axis
/// combination is scored by the largest complete box of integer coordinates
/// whose residual stays within `pat` times the smallest step. Placements whose
/// rotations differ by more than ins*pi are fit by a one-axis rotational
/// lattice (optionally helical) instead. Positions are those of the local point
/// `anchor` (typically the centre of the placed box).
LatticeFit fit_lattice(const std::vector<RigidTransform>& slots, double pat, double ins, double diagonal,
                       const Vec3& anchor = Vec3::Zero());

/// Mean translation and quaternion-averaged rotation.
RigidTransform average_transforms(const std::vector<RigidTransform>& xs);

/// Symbol id per tree label: "root" for a synthetic root, "t<k>" for terminals,
/// "n<k>" for other non-terminals, numbered by increasing label.
std::map<int, std::string> symbol_ids(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps);

/// Where a rule applies: all instances of `lhsLabel` whose children include
/// `childLabel`, with `reference` the one whose children define the slots
/// (the medoid when it has such children).
struct RuleSite {
  int lhsLabel = 0;
  int childLabel = 0;
  int reference = -1;
  std::vector<int> parents;  // reference first
  int slotCount = 0;
};
std::vector<RuleSite> rule_sites(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps);

/// Grammar values implied by the representatives without fitting lattices or
/// exporting: the counts evaluate() would report for the exported grammar.
GrammarValues estimate_values(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps);

/// One rule per (application-root label, child label) pair. Children of every
/// application-root instance are matched to the slots of the reference
/// instance (the medoid) within `ins`, averaged per slot, and lattice-fit.
std::vector<Rule> extract_patterns(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps,
                                   const PatternParams& params);

/// Assembles the grammar: leaf representatives become terminals, inner ones
/// non-terminals, geometry payloads come from the medoid members. Values are
/// rounded to 9 significant digits so the grammar survives serialization bitwise.
SplitGrammar export_grammar(const InstanceTree& tree, const std::vector<RepresentativeInstance>& reps,
                            std::vector<Rule> rules, const Model& model, const ComponentSet& set);

}  // namespace gproc
