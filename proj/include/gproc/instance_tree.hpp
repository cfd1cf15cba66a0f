#pragma once

#include "gproc/geometry.hpp"
#include "gproc/params.hpp"

#include <json.hpp>

#include <vector>

namespace gproc {

/// Label reserved for the synthetic root; content labels start at 1.
inline constexpr int kRootLabel = 0;

struct TreeNode {
  int id = 0;
  int component = -1;  // index into the ComponentSet, -1 for synthetic nodes
  int label = kRootLabel;
  int parent = -1;
  RigidTransform edge;   // placement relative to the parent's frame
  RigidTransform frame;  // world placement of the local frame
  Vec3 localSize = Vec3::Zero();
  BoundingBox bbox;      // world AABB of the node's own elements
  int elementCount = 0;
  std::vector<int> children;
  bool synthetic = false;
  bool flagged = false;  // attached by centre containment rather than full containment

  BoundingBox local_box() const { return BoundingBox::of_corners(Vec3::Zero(), localSize); }
};

/// Containment hierarchy of components. Node 0 is the root; detached nodes
/// (removed by folding) keep their slot with `parent == -1` and no children.
class InstanceTree {
 public:
  std::vector<TreeNode> nodes;
  int root = 0;
  double diagonal = 1.0;

  const TreeNode& node(int i) const { return nodes[i]; }
  TreeNode& node(int i) { return nodes[i]; }
  /// Live nodes in breadth-first order from the root (children in stored order).
  std::vector<int> bfs() const;
  std::vector<int> bfs_from(int start) const;
  int depth_of(int i) const;
  /// Number of live nodes.
  int size() const;
  int label_count() const;
  bool is_live(int i) const;

  /// Recomputes every frame from the root frame and the edges.
  void recompute_frames();
  /// Throws Error when a structural invariant or the edge relation fails by more than tol.
  void validate(double tol) const;
};

/// Inserts components by decreasing size under their tightest container.
/// Content labels are segmentation labels + 1; several top-level components
/// get a synthetic root spanning `modelBox`.
InstanceTree build_tree(const ComponentSet& set, const BoundingBox& modelBox);

/// Structural and geometric comparison of the subtrees under `a` and `b`.
bool subtree_similar(const InstanceTree& tree, int a, int b, const TreeParams& params);

struct RepresentativeInstance {
  int label = 0;
  std::vector<int> members;  // node ids, ascending
  int medoid = -1;
  bool terminal = true;      // members have no children
  bool flagged = false;      // produced by splitting incompatible ancestor paths
};

/// Splits label classes until every same-label pair is subtree-similar, then
/// relabels densely in breadth-first order. Returns one representative per label
/// (the root's own class included).
std::vector<RepresentativeInstance> refine_labels(InstanceTree& tree, const TreeParams& params);

/// Folds synthetic non-root nodes into the edges of their children and splits a
/// representative whose members hang under differently labelled parents.
/// Idempotent. Returns the canonical representatives.
std::vector<RepresentativeInstance> canonicalize_join(InstanceTree& tree,
                                                      const std::vector<RepresentativeInstance>& reps);

/// Nested outline {id, label, synthetic, bbox, transform, children}.
nlohmann::ordered_json tree_outline(const InstanceTree& tree);

nlohmann::ordered_json to_json(const RigidTransform& t);
nlohmann::ordered_json to_json(const BoundingBox& b);

}  // namespace gproc
