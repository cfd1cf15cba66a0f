#include <doctest.h>

#include "gproc/fixtures.hpp"
#include "gproc/instance_tree.hpp"
#include "gproc/segmentation.hpp"

#include <algorithm>
#include <map>
#include <numbers>

using namespace gproc;

namespace {

struct Built {
  Model model;
  ComponentSet set;
  InstanceTree tree;
};

Built build(Model m, const ShapeParams* p = nullptr) {
  const ShapeParams params = p ? *p : default_params(m).shape;
  ComponentSet set = segment(m, params);
  InstanceTree tree = build_tree(set, m.bbox());
  return {std::move(m), std::move(set), std::move(tree)};
}

// Independent oracle: parent component by brute-force search for the
// smallest-volume box that contains the component's box.
std::vector<int> containment_oracle(const ComponentSet& set, double slack) {
  const int n = set.component_count();
  std::vector<int> parent(n, -1);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& a = set.components[j].bbox;
      const auto& b = set.components[i].bbox;
      if (!a.contains(b, slack)) continue;
      if (b.contains(a, slack) && j > i) continue;  // identical boxes: earlier one is the container
      const double v = (a.size().array() + slack).prod();
      if (v < best) {
        best = v;
        parent[i] = j;
      }
    }
  }
  return parent;
}

std::map<int, int> label_histogram(const InstanceTree& t) {
  std::map<int, int> h;
  for (int v : t.bfs()) ++h[t.node(v).label];
  return h;
}

TreeNode synthetic_node(int id, int parent, const RigidTransform& edge) {
  TreeNode n;
  n.id = id;
  n.parent = parent;
  n.edge = edge;
  n.synthetic = true;
  n.localSize = Vec3(1, 1, 1);
  return n;
}

TreeNode content_node(int id, int parent, int label, const RigidTransform& edge, const Vec3& size) {
  TreeNode n;
  n.id = id;
  n.component = id;
  n.parent = parent;
  n.label = label;
  n.edge = edge;
  n.localSize = size;
  n.elementCount = 12;
  return n;
}

void finish(InstanceTree& t) {
  for (auto& n : t.nodes)
    if (n.parent >= 0) t.nodes[n.parent].children.push_back(n.id);
  t.recompute_frames();
  for (auto& n : t.nodes) n.bbox = n.frame.apply(n.local_box());
}

}  // namespace

TEST_CASE("build_tree on the facade") {
  const Built b = build(facade_fixture());
  const InstanceTree& t = b.tree;
  REQUIRE(t.size() == 31);
  CHECK(!t.node(t.root).synthetic);
  CHECK(t.node(t.root).children.size() == 6);
  for (int w : t.node(t.root).children) {
    CHECK(t.node(w).children.size() == 4);
    for (int p : t.node(w).children) CHECK(t.node(p).children.empty());
  }
  t.validate(1e-6 * t.diagonal);

  SUBCASE("parents agree with the brute-force containment oracle") {
    const auto oracle = containment_oracle(b.set, 1e-6 * t.diagonal);
    for (int v : t.bfs()) {
      const TreeNode& n = t.node(v);
      if (n.parent < 0) continue;
      CHECK(t.node(n.parent).component == oracle[n.component]);
    }
  }
  SUBCASE("edges reproduce component frames root to leaf") {
    for (int v : t.bfs()) {
      RigidTransform acc = RigidTransform::identity();
      std::vector<int> path;
      for (int u = v; u >= 0; u = t.node(u).parent) path.push_back(u);
      std::reverse(path.begin(), path.end());
      acc = t.node(path.front()).frame;
      for (std::size_t k = 1; k < path.size(); ++k) acc = acc * t.node(path[k]).edge;
      CHECK(acc.approx_equal(b.set.components[t.node(v).component].frame, 1e-9));
      const BoundingBox placed = acc.apply(t.node(v).local_box());
      CHECK(placed.contains(t.node(v).bbox, 1e-9));
    }
  }
  SUBCASE("labels carry over from segmentation") {
    for (int v : t.bfs()) CHECK(t.node(v).label == b.set.labels[t.node(v).component] + 1);
  }
}

TEST_CASE("build_tree edge cases") {
  SUBCASE("single component") {
    const Built b = build(unit_cube());
    CHECK(b.tree.size() == 1);
    CHECK(b.tree.node(b.tree.root).children.empty());
  }
  SUBCASE("3x2 plain windows: depth 2, six leaves") {
    const Built b = build(plain_window_grid(3, 2));
    int leaves = 0, maxDepth = 0;
    for (int v : b.tree.bfs()) {
      if (b.tree.node(v).children.empty()) ++leaves;
      maxDepth = std::max(maxDepth, b.tree.depth_of(v));
    }
    CHECK(leaves == 6);
    CHECK(maxDepth == 1);
    CHECK(b.tree.size() == 7);
  }
  SUBCASE("disjoint components get a synthetic root") {
    const Built b = build(irregular_shapes());
    const TreeNode& r = b.tree.node(b.tree.root);
    CHECK(r.synthetic);
    CHECK(r.label == kRootLabel);
    CHECK(r.children.size() == 12);
    b.tree.validate(1e-6 * b.tree.diagonal);
  }
  SUBCASE("rotated members keep exact edges") {
    const Built b = build(rotational_fixture());
    b.tree.validate(1e-6 * b.tree.diagonal);
    // Blocks sit on the plate rather than inside it: plate and six blocks are siblings.
    CHECK(b.tree.node(b.tree.root).synthetic);
    CHECK(b.tree.node(b.tree.root).children.size() == 7);
  }
  SUBCASE("overlapping boxes attach by centre and are flagged") {
    std::vector<Triangle> tris;
    int vid = 0;
    append_box(tris, Vec3(0, 0, 0), Vec3(4, 4, 1), vid);
    append_box(tris, Vec3(3, 1, 0.2), Vec3(4.6, 2, 0.8), vid);  // pokes out of the slab
    const Built b = build(Model::mesh(tris));
    REQUIRE(b.tree.size() == 2);
    const TreeNode& child = b.tree.node(b.tree.node(b.tree.root).children.at(0));
    CHECK(child.flagged);
  }
}

TEST_CASE("subtree_similar") {
  const TreeParams strict{};
  SUBCASE("congruent windows and reflexivity") {
    const Built b = build(facade_fixture());
    const auto& windows = b.tree.node(b.tree.root).children;
    for (int w : windows) CHECK(subtree_similar(b.tree, windows[0], w, strict));
    CHECK(subtree_similar(b.tree, b.tree.root, b.tree.root, strict));
  }
  SUBCASE("window missing a pane") {
    const Built b = build(missing_pane_facade());
    const auto& windows = b.tree.node(b.tree.root).children;
    int incomplete = -1, complete = -1;
    for (int w : windows) (b.tree.node(w).children.size() == 3 ? incomplete : complete) = w;
    REQUIRE(incomplete >= 0);
    REQUIRE(complete >= 0);
    CHECK(!subtree_similar(b.tree, complete, incomplete, strict));
    TreeParams relaxed = strict;
    relaxed.sub = 0.3;
    CHECK(subtree_similar(b.tree, complete, incomplete, relaxed));
  }
  SUBCASE("leaf never matches an inner node") {
    const Built b = build(facade_fixture());
    const int w = b.tree.node(b.tree.root).children[0];
    const int p = b.tree.node(w).children[0];
    TreeParams loose{1.0, 0.0, 1.0, 1.0};
    CHECK(!subtree_similar(b.tree, w, p, loose));
  }
}

TEST_CASE("refine_labels") {
  SUBCASE("regular grid is a fixed point") {
    Built b = build(facade_fixture());
    const auto before = label_histogram(b.tree);
    const auto reps = refine_labels(b.tree, TreeParams{});
    CHECK(label_histogram(b.tree) == before);
    REQUIRE(reps.size() == 3);
    CHECK(reps[0].members.size() == 1);
    CHECK(reps[1].members.size() == 6);
    CHECK(reps[2].members.size() == 24);
    CHECK(!reps[1].terminal);
    CHECK(reps[2].terminal);
  }
  SUBCASE("window with a missing pane splits off") {
    Built b = build(missing_pane_facade());
    const int before = b.tree.label_count();
    const auto reps = refine_labels(b.tree, TreeParams{});
    CHECK(b.tree.label_count() == before + 1);
    int windowLabels = 0;
    for (const auto& r : reps)
      if (!r.terminal && r.members.front() != b.tree.root) ++windowLabels;
    CHECK(windowLabels == 2);
  }
  SUBCASE("only splits, never merges") {
    Built b = build(facade_fixture());
    std::map<int, int> original;
    for (int v : b.tree.bfs()) original[v] = b.tree.node(v).label;
    TreeParams tight{};
    tight.box = 0.0;
    tight.ele = 0.0;
    refine_labels(b.tree, tight);
    for (int u : b.tree.bfs())
      for (int v : b.tree.bfs())
        if (b.tree.node(u).label == b.tree.node(v).label) CHECK(original[u] == original[v]);
  }
  SUBCASE("stricter sub never lowers the label count") {
    for (const Model& m : {missing_pane_facade(), tower_fixture()}) {
      const Built base = build(m);
      int previous = 0;
      for (double sub : {1.0, 0.5, 0.3, 0.2, 0.1, 0.0}) {
        InstanceTree t = base.tree;
        TreeParams p{};
        p.sub = sub;
        refine_labels(t, p);
        CHECK(t.label_count() >= previous);
        previous = t.label_count();
      }
    }
  }
  SUBCASE("medoid belongs to its class") {
    Built b = build(facade_fixture());
    for (const auto& r : refine_labels(b.tree, TreeParams{}))
      CHECK(std::find(r.members.begin(), r.members.end(), r.medoid) != r.members.end());
  }
}

TEST_CASE("canonicalize_join") {
  const Vec3 wallSize(6, 6, 1), winSize(1, 1, 0.5);
  SUBCASE("chains of split points fold into edges") {
    InstanceTree t;
    t.diagonal = wallSize.norm();
    t.nodes.push_back(content_node(0, -1, 1, RigidTransform::identity(), wallSize));
    t.nodes.push_back(synthetic_node(1, 0, RigidTransform::translate(Vec3(1, 0, 0))));
    t.nodes.push_back(synthetic_node(2, 1, RigidTransform::translate(Vec3(0, 2, 0))));
    t.nodes.push_back(content_node(3, 2, 2, RigidTransform::translate(Vec3(0.5, 0.5, 0.25)), winSize));
    t.nodes.push_back(content_node(4, 0, 2, RigidTransform::translate(Vec3(4, 1, 0.25)), winSize));
    finish(t);
    const RigidTransform deepFrame = t.node(3).frame;
    auto reps = refine_labels(t, TreeParams{});
    reps = canonicalize_join(t, reps);
    t.validate(1e-9);
    CHECK(t.size() == 3);
    CHECK(t.node(3).parent == 0);
    CHECK(t.node(4).parent == 0);
    CHECK(t.depth_of(3) == t.depth_of(4));
    CHECK(t.node(3).frame.approx_equal(deepFrame, 1e-12));
    CHECK(t.node(3).edge.translation.isApprox(Vec3(1.5, 2.5, 0.25)));

    SUBCASE("idempotent") {
      const InstanceTree once = t;
      const auto again = canonicalize_join(t, reps);
      REQUIRE(again.size() == reps.size());
      for (int v : t.bfs()) {
        CHECK(t.node(v).parent == once.node(v).parent);
        CHECK(t.node(v).label == once.node(v).label);
        CHECK(t.node(v).edge.approx_equal(once.node(v).edge, 0.0));
      }
    }
  }
  SUBCASE("leaf multiset is preserved and canonical trees are unchanged") {
    Built b = build(facade_fixture());
    auto reps = refine_labels(b.tree, TreeParams{});
    std::vector<int> leavesBefore;
    for (int v : b.tree.bfs())
      if (b.tree.node(v).children.empty()) leavesBefore.push_back(b.tree.node(v).component);
    const InstanceTree before = b.tree;
    canonicalize_join(b.tree, reps);
    std::vector<int> leavesAfter;
    for (int v : b.tree.bfs())
      if (b.tree.node(v).children.empty()) leavesAfter.push_back(b.tree.node(v).component);
    std::sort(leavesBefore.begin(), leavesBefore.end());
    std::sort(leavesAfter.begin(), leavesAfter.end());
    CHECK(leavesBefore == leavesAfter);
    for (int v : b.tree.bfs()) CHECK(b.tree.node(v).parent == before.node(v).parent);
  }
  SUBCASE("members under differently labelled parents are split and flagged") {
    InstanceTree t;
    t.diagonal = 20;
    t.nodes.push_back(content_node(0, -1, 1, RigidTransform::identity(), Vec3(12, 6, 2)));
    t.nodes.push_back(content_node(1, 0, 2, RigidTransform::translate(Vec3(0.5, 0.5, 0)), Vec3(4, 4, 1.5)));
    t.nodes.push_back(content_node(2, 0, 3, RigidTransform::translate(Vec3(6, 0.5, 0)), Vec3(5, 5, 1.5)));
    t.nodes.push_back(content_node(3, 1, 4, RigidTransform::translate(Vec3(1, 1, 0.5)), winSize));
    t.nodes.push_back(content_node(4, 2, 4, RigidTransform::translate(Vec3(1, 1, 0.5)), winSize));
    finish(t);
    std::vector<RepresentativeInstance> reps;
    for (int l = 1; l <= 4; ++l) {
      RepresentativeInstance r;
      r.label = l;
      for (const auto& n : t.nodes)
        if (n.label == l) r.members.push_back(n.id);
      r.medoid = r.members.front();
      reps.push_back(r);
    }
    const auto out = canonicalize_join(t, reps);
    CHECK(t.node(3).label != t.node(4).label);
    int flagged = 0;
    for (const auto& r : out) flagged += r.flagged ? 1 : 0;
    CHECK(flagged == 2);
  }
}

TEST_CASE("tree outline") {
  const Built b = build(facade_fixture());
  const auto j = tree_outline(b.tree);
  CHECK(j["children"].size() == 6);
  CHECK(j["children"][0]["children"].size() == 4);
  CHECK(j["bbox"]["max"][0].get<double>() == doctest::Approx(5.4));
  CHECK(j.contains("transform"));
}
