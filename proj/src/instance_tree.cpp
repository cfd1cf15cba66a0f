#include "gproc/instance_tree.hpp"

#include "gproc/spatial.hpp"

#include <algorithm>
#include <map>
#include <functional>
#include <numeric>
#include <set>

namespace gproc {

namespace {

using Json = nlohmann::ordered_json;

// Label multiset per depth below `start` (depth 1 = children).
std::vector<std::vector<int>> level_labels(const InstanceTree& tree, int start) {
  std::vector<std::vector<int>> levels;
  std::vector<int> frontier = tree.node(start).children;
  while (!frontier.empty()) {
    std::vector<int> labels, next;
    for (int v : frontier) {
      labels.push_back(tree.node(v).label);
      for (int c : tree.node(v).children) next.push_back(c);
    }
    std::sort(labels.begin(), labels.end());
    levels.push_back(std::move(labels));
    frontier = std::move(next);
  }
  return levels;
}

std::size_t multiset_intersection(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++n;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return n;
}

double node_dissimilarity(const TreeNode& a, const TreeNode& b) {
  const double diag = std::max({a.localSize.norm(), b.localSize.norm(), 1e-12});
  const double ne = std::max({a.elementCount, b.elementCount, 1});
  return (a.localSize - b.localSize).norm() / diag + std::abs(a.elementCount - b.elementCount) / ne;
}

int medoid_of(const InstanceTree& tree, const std::vector<int>& members) {
  int best = members.front();
  double bestSum = std::numeric_limits<double>::infinity();
  for (int a : members) {
    double sum = 0.0;
    for (int b : members) sum += node_dissimilarity(tree.node(a), tree.node(b));
    if (sum < bestSum - 1e-12) {
      bestSum = sum;
      best = a;
    }
  }
  return best;
}

// Renumbers labels densely in breadth-first order of first appearance; the
// synthetic root keeps label 0 and content labels start at 1.
void relabel_dense(InstanceTree& tree) {
  std::map<int, int> remap;
  int next = 1;
  for (int v : tree.bfs()) {
    TreeNode& n = tree.node(v);
    if (n.synthetic && v == tree.root) {
      n.label = kRootLabel;
      continue;
    }
    auto [it, inserted] = remap.emplace(n.label, next);
    if (inserted) ++next;
    n.label = it->second;
  }
}

std::vector<RepresentativeInstance> collect_reps(const InstanceTree& tree) {
  std::map<int, std::vector<int>> byLabel;
  for (int v : tree.bfs()) byLabel[tree.node(v).label].push_back(v);
  std::vector<RepresentativeInstance> reps;
  for (auto& [label, members] : byLabel) {
    RepresentativeInstance r;
    r.label = label;
    std::sort(members.begin(), members.end());
    r.members = members;
    r.medoid = medoid_of(tree, members);
    r.terminal = tree.node(members.front()).children.empty();
    reps.push_back(std::move(r));
  }
  return reps;
}

}  // namespace

// ---------------------------------------------------------------------------
// InstanceTree
// ---------------------------------------------------------------------------

std::vector<int> InstanceTree::bfs() const { return bfs_from(root); }

std::vector<int> InstanceTree::bfs_from(int start) const {
  std::vector<int> order{start};
  for (std::size_t k = 0; k < order.size(); ++k)
    for (int c : nodes[order[k]].children) order.push_back(c);
  return order;
}

int InstanceTree::depth_of(int i) const {
  int d = 0;
  while (nodes[i].parent >= 0) {
    i = nodes[i].parent;
    ++d;
  }
  return d;
}

int InstanceTree::size() const { return static_cast<int>(bfs().size()); }

int InstanceTree::label_count() const {
  std::vector<int> labels;
  for (int v : bfs()) labels.push_back(nodes[v].label);
  std::sort(labels.begin(), labels.end());
  return static_cast<int>(std::unique(labels.begin(), labels.end()) - labels.begin());
}

bool InstanceTree::is_live(int i) const { return i == root || nodes[i].parent >= 0; }

void InstanceTree::recompute_frames() {
  for (int v : bfs())
    for (int c : nodes[v].children) nodes[c].frame = nodes[v].frame * nodes[c].edge;
}

void InstanceTree::validate(double tol) const {
  if (nodes.empty()) throw Error("instance tree: no nodes");
  if (nodes[root].parent != -1) throw Error("instance tree: root has a parent");
  const auto order = bfs();
  std::vector<int> seen(nodes.size(), 0);
  for (int v : order) {
    if (++seen[v] > 1) throw Error("instance tree: node " + std::to_string(v) + " reached twice");
    const TreeNode& n = nodes[v];
    if (!n.frame.is_valid()) throw Error("instance tree: invalid frame at node " + std::to_string(v));
    if (!n.synthetic && !n.frame.apply(n.local_box()).contains(n.bbox, tol))
      throw Error("instance tree: frame of node " + std::to_string(v) + " does not cover its elements");
    for (int c : n.children) {
      const TreeNode& ch = nodes[c];
      if (ch.parent != v) throw Error("instance tree: parent link mismatch at node " + std::to_string(c));
      if (!(n.frame * ch.edge).approx_equal(ch.frame, tol))
        throw Error("instance tree: edge transform mismatch at node " + std::to_string(c));
      if (!ch.flagged && !n.frame.apply(n.local_box()).contains(ch.bbox, tol))
        throw Error("instance tree: node " + std::to_string(c) + " escapes its parent");
    }
  }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

InstanceTree build_tree(const ComponentSet& set, const BoundingBox& modelBox) {
  if (set.components.empty()) throw Error("build_tree: empty component set");
  const int n = set.component_count();
  InstanceTree tree;
  tree.diagonal = std::max(modelBox.diagonal(), 1e-12);
  const double slack = 1e-6 * tree.diagonal;

  std::vector<BoundingBox> boxes;
  for (const auto& c : set.components) boxes.push_back(c.bbox);
  auto measure = [&](int i) { return (boxes[i].size().array() + slack).prod(); };
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return measure(a) > measure(b); });

  std::vector<int> container(n, -1);
  std::vector<char> strict(n, 1);
  for (int i = 0; i < n; ++i) {
    bool s = true;
    container[i] = tightest_container(boxes, i, slack, &s);
    strict[i] = s;
  }
  const int topLevel = static_cast<int>(std::count(container.begin(), container.end(), -1));
  const bool synthetic = topLevel != 1;

  std::vector<int> nodeOf(n, -1);
  if (synthetic) {
    TreeNode r;
    r.synthetic = true;
    r.label = kRootLabel;
    r.frame = RigidTransform::translate(modelBox.min);
    r.localSize = modelBox.size();
    r.bbox = modelBox;
    tree.nodes.push_back(r);
  }
  for (int ci : order) {
    TreeNode t;
    t.id = static_cast<int>(tree.nodes.size());
    t.component = ci;
    t.label = set.labels[ci] + 1;
    t.frame = set.components[ci].frame;
    t.localSize = set.components[ci].localSize;
    t.bbox = set.components[ci].bbox;
    t.elementCount = static_cast<int>(set.components[ci].elements.size());
    t.flagged = container[ci] >= 0 && !strict[ci];
    nodeOf[ci] = t.id;
    tree.nodes.push_back(std::move(t));
  }
  tree.root = 0;
  for (int ci : order) {
    TreeNode& t = tree.nodes[nodeOf[ci]];
    if (t.id == tree.root) continue;
    const int p = container[ci] >= 0 ? nodeOf[container[ci]] : tree.root;
    t.parent = p;
    t.edge = tree.nodes[p].frame.inverse() * t.frame;
    tree.nodes[p].children.push_back(t.id);
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Subtree similarity and label refinement
// ---------------------------------------------------------------------------

bool subtree_similar(const InstanceTree& tree, int a, int b, const TreeParams& params) {
  if (a == b) return true;
  const TreeNode& na = tree.node(a);
  const TreeNode& nb = tree.node(b);
  if (na.children.empty() != nb.children.empty()) return false;
  if (na.synthetic != nb.synthetic) return false;

  const double ne = std::max({na.elementCount, nb.elementCount, 1});
  if (std::abs(na.elementCount - nb.elementCount) / ne > params.ele + 1e-12) return false;

  const double diag = std::max({na.localSize.norm(), nb.localSize.norm(), 1e-12});
  if ((na.localSize - nb.localSize).cwiseAbs().maxCoeff() / diag > params.box + 1e-12) return false;

  const auto la = level_labels(tree, a);
  const auto lb = level_labels(tree, b);
  const std::size_t depth = std::max(la.size(), lb.size());
  std::size_t total = 0, common = 0;
  for (std::size_t d = 0; d < depth; ++d) {
    static const std::vector<int> kEmpty;
    const auto& x = d < la.size() ? la[d] : kEmpty;
    const auto& y = d < lb.size() ? lb[d] : kEmpty;
    const double big = static_cast<double>(std::max(x.size(), y.size()));
    const double diff = std::abs(static_cast<double>(x.size()) - static_cast<double>(y.size()));
    if (big > 0 && diff / big > params.sub + 1e-12) return false;
    total += std::min(x.size(), y.size());
    common += multiset_intersection(x, y);
  }
  // Label agreement over the overlapping part; count differences are governed by sub.
  const double mismatch = total ? 1.0 - static_cast<double>(common) / static_cast<double>(total) : 0.0;
  return mismatch <= 1.0 - params.sym + 1e-12;
}

std::vector<RepresentativeInstance> refine_labels(InstanceTree& tree, const TreeParams& params) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<int, std::vector<int>> byLabel;
    for (int v : tree.bfs()) byLabel[tree.node(v).label].push_back(v);
    int nextLabel = byLabel.empty() ? 1 : byLabel.rbegin()->first + 1;
    std::vector<std::pair<int, int>> assignments;
    for (auto& [label, members] : byLabel) {
      std::sort(members.begin(), members.end());
      std::vector<std::vector<int>> classes;
      for (int m : members) {
        bool placed = false;
        for (auto& cls : classes) {
          if (std::all_of(cls.begin(), cls.end(), [&](int o) { return subtree_similar(tree, m, o, params); })) {
            cls.push_back(m);
            placed = true;
            break;
          }
        }
        if (!placed) classes.push_back({m});
      }
      for (std::size_t k = 1; k < classes.size(); ++k) {
        for (int m : classes[k]) assignments.emplace_back(m, nextLabel);
        ++nextLabel;
        changed = true;
      }
    }
    for (auto [m, l] : assignments) tree.node(m).label = l;
  }
  relabel_dense(tree);
  return collect_reps(tree);
}

// ---------------------------------------------------------------------------
// Join canonicalization
// ---------------------------------------------------------------------------

std::vector<RepresentativeInstance> canonicalize_join(InstanceTree& tree,
                                                      const std::vector<RepresentativeInstance>& reps) {
  // Fold synthetic interior nodes, deepest first so chains collapse fully.
  auto order = tree.bfs();
  std::reverse(order.begin(), order.end());
  for (int v : order) {
    TreeNode& s = tree.node(v);
    if (!s.synthetic || v == tree.root) continue;
    TreeNode& p = tree.node(s.parent);
    auto pos = std::find(p.children.begin(), p.children.end(), v);
    std::vector<int> moved = s.children;
    for (int c : moved) {
      tree.node(c).edge = s.edge * tree.node(c).edge;
      tree.node(c).parent = s.parent;
    }
    pos = p.children.erase(pos);
    p.children.insert(pos, moved.begin(), moved.end());
    s.children.clear();
    s.parent = -1;
  }
  tree.recompute_frames();

  // Members of one representative must share the label of their application root.
  (void)reps;
  int nextLabel = 1;
  for (int v : tree.bfs()) nextLabel = std::max(nextLabel, tree.node(v).label + 1);
  std::set<int> splitNodes;
  std::map<int, std::map<int, std::vector<int>>> byParentLabel;
  for (int v : tree.bfs()) {
    const TreeNode& n = tree.node(v);
    if (n.parent < 0) continue;
    byParentLabel[n.label][tree.node(n.parent).label].push_back(v);
  }
  for (auto& [label, groups] : byParentLabel) {
    if (groups.size() < 2) continue;
    bool first = true;
    for (auto& [parentLabel, members] : groups) {
      splitNodes.insert(members.begin(), members.end());
      if (first) {
        first = false;
        continue;
      }
      for (int m : members) tree.node(m).label = nextLabel;
      ++nextLabel;
    }
  }
  relabel_dense(tree);
  auto out = collect_reps(tree);
  for (auto& r : out) r.flagged = splitNodes.count(r.members.front()) > 0;
  return out;
}

// ---------------------------------------------------------------------------
// JSON outline
// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const RigidTransform& t) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(round_significant(t.rotation(r, c)));
  return Json{{"rotation", rot},
              {"translation", {round_significant(t.translation.x()), round_significant(t.translation.y()),
                               round_significant(t.translation.z())}}};
}

nlohmann::ordered_json to_json(const BoundingBox& b) {
  auto v = [](const Vec3& p) {
    return Json::array({round_significant(p.x()), round_significant(p.y()), round_significant(p.z())});
  };
  return Json{{"min", v(b.min)}, {"max", v(b.max)}};
}

nlohmann::ordered_json tree_outline(const InstanceTree& tree) {
  std::function<Json(int)> rec = [&](int v) {
    const TreeNode& n = tree.node(v);
    Json j;
    j["id"] = n.id;
    j["label"] = n.label;
    j["synthetic"] = n.synthetic;
    j["bbox"] = to_json(n.bbox);
    j["transform"] = to_json(n.edge);
    Json kids = Json::array();
    for (int c : n.children) kids.push_back(rec(c));
    j["children"] = kids;
    return j;
  };
  return rec(tree.root);
}

}  // namespace gproc
