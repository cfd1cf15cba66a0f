#include "gproc/completion.hpp"

#include "gproc/icp.hpp"
#include "gproc/segmentation.hpp"
#include "gproc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace gproc {

namespace {

using Cell = std::array<long long, 3>;

Cell cell_of(const Vec3& p, const Vec3& origin, double size) {
  const Vec3 q = (p - origin) / size;
  return {static_cast<long long>(std::floor(q.x())), static_cast<long long>(std::floor(q.y())),
          static_cast<long long>(std::floor(q.z()))};
}

std::vector<Vec3> positions_of(std::span<const Point> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(p.p);
  return out;
}

Point transformed(const Point& p, const RigidTransform& xf) {
  Point q{xf.apply(p.p), std::nullopt};
  if (p.normal) q.normal = xf.apply_vector(*p.normal);
  return q;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

/// Picks `count` of `indices` spread evenly: farthest-point order starting
/// next to the centroid.
std::vector<int> farthest_points(const std::vector<Vec3>& pts, const std::vector<int>& indices, std::size_t count) {
  if (indices.size() <= count) return indices;
  Vec3 centroid = Vec3::Zero();
  for (int i : indices) centroid += pts[i];
  centroid /= static_cast<double>(indices.size());
  std::vector<double> dist(indices.size(), std::numeric_limits<double>::infinity());
  std::size_t first = 0;
  for (std::size_t k = 1; k < indices.size(); ++k) {
    if ((pts[indices[k]] - centroid).squaredNorm() < (pts[indices[first]] - centroid).squaredNorm()) first = k;
  }
  std::vector<int> out;
  std::size_t next = first;
  while (out.size() < count) {
    out.push_back(indices[next]);
    dist[next] = -1.0;
    std::size_t best = next;
    double bestDist = -1.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      if (dist[k] < 0.0) continue;
      dist[k] = std::min(dist[k], (pts[indices[k]] - pts[indices[next]]).squaredNorm());
      if (dist[k] > bestDist) {
        bestDist = dist[k];
        best = k;
      }
    }
    next = best;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

ConsensusModel build_consensus(std::span<const ConsensusMember> members, int label, int medoidIndex,
                               const ConsensusOptions& options) {
  if (members.empty()) throw ValidationError("/members", "at least one member is required");
  const int n = static_cast<int>(members.size());
  for (const auto& m : members) {
    if (m.points.size() < 3) throw ValidationError("/members", "every member needs at least three points");
  }
  ConsensusModel cm;
  cm.label = label;
  for (const auto& m : members) cm.maxMemberPoints = std::max(cm.maxMemberPoints, m.points.size());

  std::vector<std::vector<Vec3>> world(n);
  std::vector<KdTree> trees;
  trees.reserve(n);
  for (int i = 0; i < n; ++i) {
    world[i] = positions_of(members[i].points);
    trees.emplace_back(world[i]);
  }
  const auto initial = [&](int i, int j) { return members[j].frame * members[i].frame.inverse(); };

  if (medoidIndex < 0 || medoidIndex >= n) {
    double best = std::numeric_limits<double>::infinity();
    medoidIndex = 0;
    for (int i = 0; i < n; ++i) {
      double sum = 0.0;
      const auto sample = stride_sample(world[i], 500);
      for (int j = 0; j < n; ++j) {
        if (i != j) sum += mean_closest_distance(sample, trees[j], initial(i, j), options.keep);
      }
      if (sum < best) {
        best = sum;
        medoidIndex = i;
      }
    }
  }
  const int med = medoidIndex;
  const ConsensusMember& ref = members[med];
  cm.medoid = ref.node;
  const RigidTransform toCanonical = ref.frame.inverse();
  const double spacing = std::max(median_spacing(trees[med]), 1e-12);
  cm.residualBound = options.residualFactor * spacing;

  std::vector<int> used;
  std::vector<RigidTransform> align(n);  // member world -> canonical
  for (int i = 0; i < n; ++i) {
    if (i == med) {
      align[i] = toCanonical;
      cm.alignment[members[i].node] = toCanonical;
      cm.residual[members[i].node] = 0.0;
      used.push_back(i);
      continue;
    }
    const auto sample = stride_sample(world[i], 2000);
    const auto score = [&](const RigidTransform& t) {
      const auto back = stride_sample(world[med], 2000);
      return std::max(mean_closest_distance(sample, trees[med], t, options.keep),
                      mean_closest_distance(back, trees[i], t.inverse(), options.keep));
    };
    IcpResult r = icp_align(sample, trees[med], 60, 1e-12, initial(i, med), 10.0 * spacing, options.keep);
    double residual = score(r.transform);
    if (residual > cm.residualBound) {
      const IcpResult g = register_shapes(sample, world[med], trees[med], ref.frame.apply(Vec3::Zero()).norm() + 1.0,
                                          400, options.keep);
      const double alt = score(g.transform);
      if (alt < residual) {
        r = g;
        residual = alt;
      }
    }
    cm.residual[members[i].node] = residual;
    if (residual > cm.residualBound) {
      cm.excluded.push_back(members[i].node);
      continue;
    }
    align[i] = toCanonical * r.transform;
    cm.alignment[members[i].node] = align[i];
    used.push_back(i);
  }

  std::vector<Point> merged;
  std::vector<int> owner;
  for (int i : used) {
    for (const auto& p : members[i].points) {
      merged.push_back(transformed(p, align[i]));
      owner.push_back(i);
    }
  }
  if (used.size() == 1) {
    cm.points = std::move(merged);
    cm.coverage[ref.node] = 1.0;
    return cm;
  }

  // Resample: every cell keeps the median point count of the members that reach it.
  const std::vector<Vec3> pos = positions_of(merged);
  const Vec3 origin = bbox_of(std::span<const Vec3>(pos)).min;
  const double h = options.cellFactor * spacing;
  std::map<Cell, std::vector<int>> cells;
  std::map<Cell, std::map<int, int>> counts;
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const Cell c = cell_of(pos[k], origin, h);
    cells[c].push_back(static_cast<int>(k));
    ++counts[c][owner[k]];
  }
  std::vector<char> keep(pos.size(), 0);
  std::size_t kept = 0;
  std::map<int, int> reached;
  for (const auto& [c, idx] : cells) {
    std::vector<double> per;
    for (const auto& [m, cnt] : counts[c]) {
      per.push_back(cnt);
      ++reached[m];
    }
    const auto quota = static_cast<std::size_t>(median_of(per));
    for (int k : farthest_points(pos, idx, quota)) {
      keep[k] = 1;
      ++kept;
    }
  }
  for (std::size_t k = 0; kept < cm.maxMemberPoints && k < keep.size(); ++k) {
    if (!keep[k]) {
      keep[k] = 1;
      ++kept;
    }
  }
  for (std::size_t k = 0; k < merged.size(); ++k) {
    if (keep[k]) cm.points.push_back(merged[k]);
  }
  for (int i : used) {
    cm.coverage[members[i].node] = static_cast<double>(reached[i]) / static_cast<double>(cells.size());
  }
  return cm;
}

std::vector<ConsensusModel> build_consensus_models(const Model& cloud, const InstanceTree& tree,
                                                   const std::vector<RepresentativeInstance>& reps,
                                                   const ComponentSet& set, const ConsensusOptions& options) {
  if (cloud.is_mesh()) throw ValidationError("/model", "consensus completion needs a point cloud");
  std::vector<ConsensusModel> out;
  for (const auto& rep : reps) {
    std::vector<ConsensusMember> members;
    int medoid = -1;
    for (int node : rep.members) {
      const TreeNode& t = tree.nodes[node];
      if (t.component < 0 || t.synthetic) continue;
      ConsensusMember m;
      m.node = node;
      m.frame = t.frame;
      for (int e : set.components[t.component].elements) m.points.push_back(cloud.points()[e]);
      if (m.points.size() < 3) continue;
      if (node == rep.medoid) medoid = static_cast<int>(members.size());
      members.push_back(std::move(m));
    }
    if (members.size() < 2) continue;
    out.push_back(build_consensus(members, rep.label, medoid, options));
  }
  return out;
}

Model apply_consensus(const Model& cloud, const InstanceTree& tree, const ComponentSet& set,
                      const std::vector<ConsensusModel>& models, double voxel) {
  if (cloud.is_mesh()) throw ValidationError("/model", "consensus completion needs a point cloud");
  if (voxel <= 0.0) voxel = 0.01 * std::max(cloud.diagonal(), 1e-12);
  const Vec3 origin = cloud.bbox().min;

  std::vector<char> replaced(cloud.size(), 0);
  std::vector<Point> placed;
  for (const auto& cm : models) {
    for (const auto& [node, toCanonical] : cm.alignment) {
      const TreeNode& t = tree.nodes.at(node);
      if (t.component < 0) continue;
      for (int e : set.components[t.component].elements) replaced[e] = 1;
      const RigidTransform toWorld = toCanonical.inverse();
      for (const auto& p : cm.points) placed.push_back(transformed(p, toWorld));
    }
  }
  std::vector<Point> out;
  out.reserve(cloud.size() + placed.size());
  for (std::size_t e = 0; e < cloud.size(); ++e) {
    if (!replaced[e]) out.push_back(cloud.points()[e]);
  }
  out.insert(out.end(), placed.begin(), placed.end());
  std::set<Cell> occupied;
  for (const auto& p : out) occupied.insert(cell_of(p.p, origin, voxel));
  for (std::size_t e = 0; e < cloud.size(); ++e) {
    if (!replaced[e]) continue;
    const Cell c = cell_of(cloud.points()[e].p, origin, voxel);
    if (occupied.insert(c).second) out.push_back(cloud.points()[e]);
  }
  return Model::cloud(std::move(out));
}

double voxel_coverage(const Model& reference, const Model& cloud, double voxel) {
  if (voxel <= 0.0) throw ValidationError("/voxel", "must be > 0");
  const Vec3 origin = reference.bbox().min;
  std::set<Cell> ref, have;
  for (const auto& p : reference.points()) ref.insert(cell_of(p.p, origin, voxel));
  for (const auto& p : cloud.points()) have.insert(cell_of(p.p, origin, voxel));
  if (ref.empty()) return 1.0;
  std::size_t hit = 0;
  for (const auto& c : ref) hit += have.count(c);
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

namespace {

std::vector<double> neighbour_counts(const Model& sampleFrom, const KdTree& in, double radius) {
  const auto pts = stride_sample(positions_of(sampleFrom.points()), 2000);
  std::vector<double> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(static_cast<double>(in.radius(p, radius).size()) - 1.0);
  return out;
}

std::vector<int> histogram(const std::vector<double>& values, double hi, int bins) {
  std::vector<int> h(bins, 0);
  for (double v : values) {
    const int b = hi > 0.0 ? static_cast<int>(v / hi * bins) : 0;
    ++h[std::clamp(b, 0, bins - 1)];
  }
  return h;
}

}  // namespace

CompletionReport completion_stats(const Model& before, const Model& after, const std::vector<ConsensusModel>& models,
                                  double voxel) {
  if (before.is_mesh() || after.is_mesh()) throw ValidationError("/model", "completion statistics need point clouds");
  CompletionReport r;
  r.pointsBefore = before.size();
  r.pointsAfter = after.size();
  r.gainPercent = r.pointsBefore ? 100.0 * (static_cast<double>(r.pointsAfter) - static_cast<double>(r.pointsBefore)) /
                                       static_cast<double>(r.pointsBefore)
                                 : 0.0;
  r.voxel = voxel > 0.0 ? voxel : 0.01 * std::max(before.diagonal(), 1e-12);
  r.coverageKept = voxel_coverage(before, after, r.voxel);
  for (const auto& cm : models) {
    double sum = 0.0;
    for (const auto& [node, c] : cm.coverage) sum += c;
    r.labelCoverageBefore[cm.label] = cm.coverage.empty() ? 1.0 : sum / static_cast<double>(cm.coverage.size());
  }
  if (before.size() >= 2 && after.size() >= 2) {
    const KdTree tb(positions_of(before.points())), ta(positions_of(after.points()));
    r.densityRadius = 2.0 * median_spacing(tb);
    const auto db = neighbour_counts(before, tb, r.densityRadius);
    const auto da = neighbour_counts(after, ta, r.densityRadius);
    r.medianDensityBefore = median_of(db);
    r.medianDensityAfter = median_of(da);
    const double hi = 2.0 * std::max(r.medianDensityBefore, 1.0);
    r.densityBefore = histogram(db, hi, 16);
    r.densityAfter = histogram(da, hi, 16);
    r.lowDensityWarning = r.medianDensityAfter < 0.8 * r.medianDensityBefore;
  }
  return r;
}

nlohmann::ordered_json CompletionReport::to_json() const {
  nlohmann::ordered_json j;
  j["pointsBefore"] = pointsBefore;
  j["pointsAfter"] = pointsAfter;
  j["gainPercent"] = gainPercent;
  j["voxel"] = voxel;
  j["coverageKept"] = coverageKept;
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& [l, c] : labelCoverageBefore) labels[std::to_string(l)] = c;
  j["labelCoverage"] = labels;
  j["density"] = {{"radius", densityRadius},
                  {"medianBefore", medianDensityBefore},
                  {"medianAfter", medianDensityAfter},
                  {"histogramBefore", densityBefore},
                  {"histogramAfter", densityAfter},
                  {"lowDensityWarning", lowDensityWarning}};
  return j;
}

std::string CompletionReport::to_text() const {
  std::ostringstream s;
  s << "points: " << pointsBefore << " -> " << pointsAfter << " (" << (gainPercent >= 0 ? "+" : "") << gainPercent
    << "%)\n";
  s << "occupied voxels kept: " << 100.0 * coverageKept << "% (voxel " << voxel << ")\n";
  for (const auto& [l, c] : labelCoverageBefore) s << "label " << l << ": members covered " << 100.0 * c << "% of the consensus\n";
  s << "median neighbours within " << densityRadius << ": " << medianDensityBefore << " -> " << medianDensityAfter << "\n";
  if (lowDensityWarning) s << "warning: local point density dropped\n";
  return s.str();
}

CompletionResult complete_cloud(const Model& cloud, const ParamVector& theta, std::uint64_t seed,
                                const ConsensusOptions& options) {
  if (cloud.is_mesh()) throw ValidationError("/model", "consensus completion needs a point cloud");
  ComponentSet components = segment(cloud, theta.shape, seed);
  InstanceTree tree = build_tree(components, cloud.bbox());
  const auto reps = canonicalize_join(tree, refine_labels(tree, theta.tree));
  auto models = build_consensus_models(cloud, tree, reps, components, options);
  Model completed = apply_consensus(cloud, tree, components, models);
  CompletionReport report = completion_stats(cloud, completed, models);
  return CompletionResult{std::move(components), std::move(tree), std::move(models), std::move(completed),
                          std::move(report)};
}

}  // namespace gproc
