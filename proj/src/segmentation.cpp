#include "gproc/segmentation.hpp"

#include "gproc/icp.hpp"
#include "gproc/model_io.hpp"
#include "gproc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace gproc {

namespace {

constexpr double kSnapAngle = 0.1;  // radians; smaller member rotations are treated as none
constexpr int kDegreeBins = 12;
constexpr double kCloudKeep = 0.7;
constexpr double kClusterFactor = 5.0;  // Euclidean clustering radius in median spacings

Mat3 snapped_rotation(const RigidTransform& memberToSeed) {
  if (memberToSeed.angle() < kSnapAngle) return Mat3::Identity();
  return orthonormalize(memberToSeed.rotation.transpose());
}

void assign_frames(const Model& model, ComponentSet& set, const std::vector<RigidTransform>& toSeed) {
  for (std::size_t i = 0; i < set.components.size(); ++i) {
    auto& c = set.components[i];
    const auto pts = model.positions(c.elements);
    c.frame = frame_for(pts, snapped_rotation(toSeed[i]), &c.localSize);
  }
}

template <typename Score>
void greedy_labels(ComponentSet& set, std::vector<RigidTransform>& toSeed, Score&& score) {
  const int n = set.component_count();
  set.labels.assign(n, -1);
  set.seeds.clear();
  toSeed.assign(n, RigidTransform{});
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double bestValue = -1.0;
    RigidTransform bestXf;
    for (int l = 0; l < static_cast<int>(set.seeds.size()); ++l) {
      auto s = score(i, set.seeds[l]);
      if (!s) continue;
      if (s->value > bestValue) {
        best = l;
        bestValue = s->value;
        bestXf = s->alignment;
      }
    }
    if (best < 0) {
      set.labels[i] = static_cast<int>(set.seeds.size());
      set.seeds.push_back(i);
    } else {
      set.labels[i] = best;
      toSeed[i] = bestXf;
    }
  }
}

// ---------------------------------------------------------------------------
// Meshes
// ---------------------------------------------------------------------------

struct MeshDescriptor {
  std::vector<Vec3> verts;
  std::vector<Vec3> samples;  // vertices and triangle centroids
  KdTree sampleTree;
  double hullVolume = 0.0;
  Vec3 extents = Vec3::Zero();  // along principal axes, descending
  std::vector<Vec3> triDesc;    // sorted edge lengths
  KdTree descTree;
  double meanEdge = 0.0;
  std::vector<Vec3> normals, centroids;
  std::vector<double> areas;
  KdTree centroidTree;
  std::array<double, kDegreeBins> degree{};
  double diagonal = 0.0;
};

struct Part {
  std::vector<int> tris;
  BoundingBox box;
};

class MeshSegmenter final : public Segmenter {
 public:
  explicit MeshSegmenter(const Model& model) : Segmenter(model) {
    build_vertex_keys();
    build_parts();
  }

  ComponentSet segment(const ShapeParams& params) override;
  SimilarityScore similarity(const Component& a, const Component& b) override {
    return score(descriptor(a.elements), descriptor(b.elements), a.elements, b.elements);
  }

 private:
  void build_vertex_keys();
  void build_parts();
  std::shared_ptr<const MeshDescriptor> descriptor(const std::vector<int>& elements);
  SimilarityScore score(const std::shared_ptr<const MeshDescriptor>& a, const std::shared_ptr<const MeshDescriptor>& b,
                        const std::vector<int>& ea, const std::vector<int>& eb);
  static void cheap_terms(const MeshDescriptor& a, const MeshDescriptor& b, SimilarityScore& s);

  std::vector<std::array<int, 3>> vkey_;
  std::vector<Vec3> vpos_;
  std::vector<Part> parts_;
  std::vector<int> container_;
  std::map<std::vector<int>, std::shared_ptr<const MeshDescriptor>> descriptors_;
  std::map<std::pair<const MeshDescriptor*, const MeshDescriptor*>, SimilarityScore> scores_;
};

void MeshSegmenter::build_vertex_keys() {
  const auto& tris = model_.triangles();
  vkey_.resize(tris.size());
  std::map<int, int> byId;
  std::map<std::array<long long, 3>, int> byPos;
  const double q = 1e-7 * model_.diagonal();
  for (std::size_t t = 0; t < tris.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      int key;
      if (tris[t].vid[k] >= 0) {
        auto [it, inserted] = byId.try_emplace(tris[t].vid[k], static_cast<int>(vpos_.size()));
        key = it->second;
        if (inserted) vpos_.push_back(tris[t].v[k]);
      } else {
        const Vec3& p = tris[t].v[k];
        const std::array<long long, 3> cell{std::llround(p.x() / q), std::llround(p.y() / q), std::llround(p.z() / q)};
        auto [it, inserted] = byPos.try_emplace(cell, static_cast<int>(vpos_.size()));
        key = it->second;
        if (inserted) vpos_.push_back(p);
      }
      vkey_[t][k] = key;
    }
  }
}

void MeshSegmenter::build_parts() {
  const int nv = static_cast<int>(vpos_.size());
  std::vector<int> uf(nv);
  std::iota(uf.begin(), uf.end(), 0);
  auto find = [&](int x) {
    while (uf[x] != x) x = uf[x] = uf[uf[x]];
    return x;
  };
  for (const auto& k : vkey_) {
    uf[find(k[1])] = find(k[0]);
    uf[find(k[2])] = find(k[0]);
  }
  std::map<int, int> partOf;
  const auto& tris = model_.triangles();
  for (std::size_t t = 0; t < tris.size(); ++t) {
    auto [it, inserted] = partOf.try_emplace(find(vkey_[t][0]), static_cast<int>(parts_.size()));
    if (inserted) parts_.emplace_back();
    Part& p = parts_[it->second];
    p.tris.push_back(static_cast<int>(t));
    for (const auto& v : tris[t].v) p.box.expand(v);
  }
  std::vector<BoundingBox> boxes;
  for (const auto& p : parts_) boxes.push_back(p.box);
  container_.resize(parts_.size());
  const double slack = 1e-6 * model_.diagonal();
  for (int i = 0; i < static_cast<int>(parts_.size()); ++i) container_[i] = tightest_container(boxes, i, slack);
}

std::shared_ptr<const MeshDescriptor> MeshSegmenter::descriptor(const std::vector<int>& elements) {
  auto it = descriptors_.find(elements);
  if (it != descriptors_.end()) return it->second;

  auto d = std::make_shared<MeshDescriptor>();
  const auto& tris = model_.triangles();
  std::map<int, int> local;
  std::vector<std::vector<int>> nbrs;
  auto vertex = [&](int key) {
    auto [lit, inserted] = local.try_emplace(key, static_cast<int>(d->verts.size()));
    if (inserted) {
      d->verts.push_back(vpos_[key]);
      nbrs.emplace_back();
    }
    return lit->second;
  };
  double edgeSum = 0.0;
  for (int t : elements) {
    const Triangle& tri = tris[t];
    std::array<int, 3> lv{};
    for (int k = 0; k < 3; ++k) lv[k] = vertex(vkey_[t][k]);
    for (int k = 0; k < 3; ++k) {
      nbrs[lv[k]].push_back(lv[(k + 1) % 3]);
      nbrs[lv[k]].push_back(lv[(k + 2) % 3]);
    }
    std::array<double, 3> e{(tri.v[1] - tri.v[0]).norm(), (tri.v[2] - tri.v[1]).norm(), (tri.v[0] - tri.v[2]).norm()};
    std::sort(e.begin(), e.end());
    d->triDesc.emplace_back(e[0], e[1], e[2]);
    edgeSum += e[0] + e[1] + e[2];
    d->normals.push_back(tri.normal());
    d->centroids.push_back(tri.centroid());
    d->areas.push_back(tri.area());
  }
  d->meanEdge = edgeSum / std::max<std::size_t>(1, 3 * elements.size());
  for (auto& nb : nbrs) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    d->degree[std::min<std::size_t>(nb.size(), kDegreeBins - 1)] += 1.0;
  }
  for (auto& h : d->degree) h /= static_cast<double>(std::max<std::size_t>(1, nbrs.size()));

  d->samples = d->verts;
  d->samples.insert(d->samples.end(), d->centroids.begin(), d->centroids.end());
  d->sampleTree = KdTree(d->samples);
  d->descTree = KdTree(d->triDesc);
  d->centroidTree = KdTree(d->centroids);
  d->hullVolume = convex_hull_volume(d->verts);
  const Pca pca = principal_axes(d->verts);
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& v : d->verts) {
    const Vec3 q = pca.axes.transpose() * (v - pca.mean);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  d->extents = hi - lo;
  std::sort(d->extents.data(), d->extents.data() + 3, std::greater<>());
  d->diagonal = bbox_of(std::span<const Vec3>(d->verts)).diagonal();
  descriptors_.emplace(elements, d);
  return d;
}

void MeshSegmenter::cheap_terms(const MeshDescriptor& a, const MeshDescriptor& b, SimilarityScore& s) {
  const double pad = 1e-6 * std::max(a.diagonal, b.diagonal);
  double ext = 0.0;
  for (int k = 0; k < 3; ++k) {
    ext += (std::min(a.extents[k], b.extents[k]) + pad) / (std::max(a.extents[k], b.extents[k]) + pad);
  }
  ext /= 3.0;
  const double volPad = 1e-9 * std::pow(std::max(a.diagonal, b.diagonal), 3);
  if (a.hullVolume <= volPad && b.hullVolume <= volPad) {
    s.hull = ext;
  } else {
    s.hull = 0.5 * (std::min(a.hullVolume, b.hullVolume) + volPad) / (std::max(a.hullVolume, b.hullVolume) + volPad) +
             0.5 * ext;
  }

  auto directed = [](const MeshDescriptor& x, const MeshDescriptor& y) {
    double sum = 0.0;
    for (const auto& dsc : x.triDesc) sum += std::sqrt(y.descTree.nearest(dsc).second);
    return sum / static_cast<double>(std::max<std::size_t>(1, x.triDesc.size()));
  };
  const double dist = 0.5 * (directed(a, b) + directed(b, a));
  const double scale = 0.5 * (a.meanEdge + b.meanEdge);
  s.triangle = scale > 0 ? std::max(0.0, 1.0 - dist / scale) : 1.0;

  double l1 = 0.0;
  for (int k = 0; k < kDegreeBins; ++k) l1 += std::abs(a.degree[k] - b.degree[k]);
  s.topology = 1.0 - 0.5 * l1;
}

SimilarityScore MeshSegmenter::score(const std::shared_ptr<const MeshDescriptor>& pa,
                                     const std::shared_ptr<const MeshDescriptor>& pb, const std::vector<int>& ea,
                                     const std::vector<int>& eb) {
  const bool swapped = eb < ea;
  const MeshDescriptor& a = swapped ? *pb : *pa;
  const MeshDescriptor& b = swapped ? *pa : *pb;
  const auto key = std::make_pair(&a, &b);
  auto it = scores_.find(key);
  SimilarityScore s;
  if (it != scores_.end()) {
    s = it->second;
  } else {
    cheap_terms(a, b, s);
    const double scale = std::max(a.diagonal, b.diagonal);
    const IcpResult reg = register_shapes(a.samples, b.samples, b.sampleTree, scale);
    s.alignment = reg.transform;
    s.flagged = !reg.converged;

    auto deviation = [](const MeshDescriptor& x, const MeshDescriptor& y, const RigidTransform& xf) {
      double sum = 0.0, wsum = 0.0;
      const double tieTol = 1e-6 * y.diagonal;
      for (std::size_t i = 0; i < x.normals.size(); ++i) {
        // Abutting faces can share centroids; prefer the best-agreeing normal among equally near ones.
        const Vec3 q = xf.apply(x.centroids[i]);
        const Vec3 n = xf.apply_vector(x.normals[i]);
        const auto nn = y.centroidTree.knn(q, 4);
        const double dmin = (y.centroids[nn[0]] - q).norm();
        double c = -2.0;
        for (int j : nn)
          if ((y.centroids[j] - q).norm() <= dmin + tieTol) c = std::max(c, n.dot(y.normals[j]));
        c = std::clamp(c, -1.0, 1.0);
        sum += x.areas[i] * std::acos(c);
        wsum += x.areas[i];
      }
      return wsum > 0 ? sum / wsum : 0.0;
    };
    s.normalDeviation = 0.5 * (deviation(a, b, s.alignment) + deviation(b, a, s.alignment.inverse()));
    s.normal = 1.0 - s.normalDeviation / std::numbers::pi;
    s.value = 0.4 * s.hull + 0.4 * s.triangle + 0.2 * s.normal;
    scores_.emplace(key, s);
  }
  if (swapped) s.alignment = s.alignment.inverse();
  return s;
}

ComponentSet MeshSegmenter::segment(const ShapeParams& params) {
  ComponentSet set;
  const int np = static_cast<int>(parts_.size());
  const double D = model_.diagonal();

  std::vector<int> owner(np);
  std::iota(owner.begin(), owner.end(), 0);
  auto resolve = [&](int p) {
    while (owner[p] != p) p = owner[p] = owner[owner[p]];
    return p;
  };
  for (int p = 0; p < np; ++p) {
    if (container_[p] >= 0 && parts_[p].box.diagonal() < params.den * D) owner[p] = container_[p];
  }

  double cap = std::round(params.num);
  if (cap > static_cast<double>(model_.size())) {
    set.warnings.push_back("thetaNum exceeds the element count; clamped");
    cap = static_cast<double>(model_.size());
  }
  cap = std::max(1.0, cap);
  std::vector<char> alive(np, 0);
  int count = 0;
  for (int p = 0; p < np; ++p)
    if (resolve(p) == p) {
      alive[p] = 1;
      ++count;
    }
  while (count > cap) {
    int pick = -1;
    std::tuple<double, int, int> best{};
    for (int p = 0; p < np; ++p) {
      if (!alive[p] || container_[p] < 0) continue;
      const std::tuple<double, int, int> key{parts_[p].box.diagonal(), resolve(container_[p]), p};
      if (pick < 0 || key < best) {
        pick = p;
        best = key;
      }
    }
    if (pick < 0) {
      set.warnings.push_back("component cap unreachable: remaining components have no container");
      break;
    }
    owner[pick] = resolve(container_[pick]);
    alive[pick] = 0;
    --count;
  }

  std::map<int, std::vector<int>> groups;
  for (int p = 0; p < np; ++p) {
    auto& g = groups[resolve(p)];
    g.insert(g.end(), parts_[p].tris.begin(), parts_[p].tris.end());
  }
  for (auto& [root, elems] : groups) {
    std::sort(elems.begin(), elems.end());
    set.components.push_back(make_component(model_, std::move(elems), static_cast<int>(set.components.size())));
  }

  std::vector<std::shared_ptr<const MeshDescriptor>> desc;
  for (const auto& c : set.components) desc.push_back(descriptor(c.elements));

  std::vector<RigidTransform> toSeed;
  greedy_labels(set, toSeed, [&](int i, int s) -> std::optional<SimilarityScore> {
    SimilarityScore quick;
    cheap_terms(*desc[i], *desc[s], quick);
    if (quick.topology < params.top) return std::nullopt;
    if (0.4 * quick.hull + 0.4 * quick.triangle + 0.2 < params.geo) return std::nullopt;
    SimilarityScore full = score(desc[i], desc[s], set.components[i].elements, set.components[s].elements);
    if (full.value < params.geo || full.normalDeviation > params.dir) return std::nullopt;
    return full;
  });
  assign_frames(model_, set, toSeed);
  return set;
}

// ---------------------------------------------------------------------------
// Point clouds
// ---------------------------------------------------------------------------

struct CloudDescriptor {
  std::vector<Vec3> pts;
  KdTree tree;
  double spacing = 0.0;
  double selfDistance = 0.0;
  double diagonal = 0.0;
};

double trimmed_self_distance(const KdTree& tree, double keep) {
  const int n = static_cast<int>(tree.size());
  const int step = std::max(1, n / 2000);
  std::vector<double> d;
  for (int i = 0; i < n; i += step) {
    const auto nn = tree.knn(tree.point(i), 2);
    if (nn.size() == 2) d.push_back((tree.point(nn[1]) - tree.point(i)).norm());
  }
  if (d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(keep * static_cast<double>(d.size())));
  return std::accumulate(d.begin(), d.begin() + m, 0.0) / static_cast<double>(m);
}

class CloudSegmenter final : public Segmenter {
 public:
  CloudSegmenter(const Model& model, std::uint64_t seed) : Segmenter(model), seed_(seed) {
    for (const auto& p : model.points()) pos_.push_back(p.p);
    tree_ = KdTree(pos_);
    spacing_ = median_spacing(tree_);
    remaining_.assign(pos_.size(), 1);
  }

  ComponentSet segment(const ShapeParams& params) override;
  SimilarityScore similarity(const Component& a, const Component& b) override;

 private:
  bool extract_plane();
  const std::vector<std::vector<int>>& clusters(int planes);
  std::vector<std::vector<int>> euclidean(const std::vector<int>& indices) const;
  std::shared_ptr<const CloudDescriptor> descriptor(const std::vector<int>& elements);

  std::uint64_t seed_;
  std::vector<Vec3> pos_;
  KdTree tree_;
  double spacing_ = 0.0;
  std::vector<std::vector<int>> planes_;
  std::vector<char> remaining_;
  bool exhausted_ = false;
  std::map<int, std::vector<std::vector<int>>> clusterCache_;
  std::map<std::vector<int>, std::shared_ptr<const CloudDescriptor>> descriptors_;
  std::map<std::pair<const CloudDescriptor*, const CloudDescriptor*>, SimilarityScore> scores_;
};

bool CloudSegmenter::extract_plane() {
  if (exhausted_) return false;
  std::vector<int> rest;
  for (int i = 0; i < static_cast<int>(pos_.size()); ++i)
    if (remaining_[i]) rest.push_back(i);
  if (rest.size() < 3) {
    exhausted_ = true;
    return false;
  }
  const double thr = 0.005 * model_.diagonal();
  std::mt19937_64 rng(seed_ + 0x9e3779b97f4a7c15ULL * (planes_.size() + 1));
  std::uniform_int_distribution<std::size_t> pick(0, rest.size() - 1);
  auto inliers = [&](const Vec3& n, const Vec3& p0) {
    std::vector<int> out;
    for (int i : rest)
      if (std::abs(n.dot(pos_[i] - p0)) <= thr) out.push_back(i);
    return out;
  };
  std::size_t bestCount = 0;
  Vec3 bestN = Vec3::UnitZ(), bestP = Vec3::Zero();
  for (int it = 0; it < 200; ++it) {
    const Vec3& a = pos_[rest[pick(rng)]];
    const Vec3& b = pos_[rest[pick(rng)]];
    const Vec3& c = pos_[rest[pick(rng)]];
    const Vec3 n = (b - a).cross(c - a);
    if (n.norm() <= 1e-12 * model_.diagonal() * model_.diagonal()) continue;
    const Vec3 nn = n.normalized();
    std::size_t cnt = 0;
    for (int i : rest)
      if (std::abs(nn.dot(pos_[i] - a)) <= thr) ++cnt;
    if (cnt > bestCount) {
      bestCount = cnt;
      bestN = nn;
      bestP = a;
    }
  }
  std::vector<int> in = inliers(bestN, bestP);
  if (in.size() >= 3) {
    const Pca pca = principal_axes(model_.positions(in));
    in = inliers(pca.axes.col(2), pca.mean);
  }
  if (!in.empty()) {
    auto pieces = euclidean(in);
    in = std::move(*std::max_element(pieces.begin(), pieces.end(),
                                     [](const auto& a, const auto& b) { return a.size() < b.size(); }));
  }
  if (in.size() < 3 || static_cast<double>(in.size()) < 0.2 * static_cast<double>(rest.size())) {
    exhausted_ = true;
    return false;
  }
  for (int i : in) remaining_[i] = 0;
  planes_.push_back(std::move(in));
  return true;
}

std::vector<std::vector<int>> CloudSegmenter::euclidean(const std::vector<int>& indices) const {
  std::vector<char> member(pos_.size(), 0), seen(pos_.size(), 0);
  for (int i : indices) member[i] = 1;
  const double tol = kClusterFactor * spacing_;
  std::vector<std::vector<int>> out;
  for (int start : indices) {
    if (seen[start]) continue;
    std::vector<int> cluster{start};
    seen[start] = 1;
    for (std::size_t k = 0; k < cluster.size(); ++k) {
      for (int j : tree_.radius(pos_[cluster[k]], tol)) {
        if (member[j] && !seen[j]) {
          seen[j] = 1;
          cluster.push_back(j);
        }
      }
    }
    std::sort(cluster.begin(), cluster.end());
    out.push_back(std::move(cluster));
  }
  return out;
}

const std::vector<std::vector<int>>& CloudSegmenter::clusters(int planes) {
  auto it = clusterCache_.find(planes);
  if (it != clusterCache_.end()) return it->second;
  std::vector<std::vector<int>> out;
  std::vector<char> used(pos_.size(), 0);
  for (int k = 0; k < planes; ++k) {
    for (int i : planes_[k]) used[i] = 1;
    for (auto& c : euclidean(planes_[k])) out.push_back(std::move(c));
  }
  std::vector<int> rest;
  for (int i = 0; i < static_cast<int>(pos_.size()); ++i)
    if (!used[i]) rest.push_back(i);
  for (auto& c : euclidean(rest)) out.push_back(std::move(c));
  return clusterCache_.emplace(planes, std::move(out)).first->second;
}

std::shared_ptr<const CloudDescriptor> CloudSegmenter::descriptor(const std::vector<int>& elements) {
  auto it = descriptors_.find(elements);
  if (it != descriptors_.end()) return it->second;
  auto d = std::make_shared<CloudDescriptor>();
  d->pts = model_.positions(elements);
  d->tree = KdTree(d->pts);
  d->spacing = median_spacing(d->tree);
  d->selfDistance = trimmed_self_distance(d->tree, kCloudKeep);
  d->diagonal = bbox_of(std::span<const Vec3>(d->pts)).diagonal();
  descriptors_.emplace(elements, d);
  return d;
}

SimilarityScore CloudSegmenter::similarity(const Component& ca, const Component& cb) {
  auto da = descriptor(ca.elements);
  auto db = descriptor(cb.elements);
  const bool swapped = std::make_pair(cb.elements.size(), cb.elements) < std::make_pair(ca.elements.size(), ca.elements);
  const CloudDescriptor& a = swapped ? *db : *da;  // smaller
  const CloudDescriptor& b = swapped ? *da : *db;
  const auto key = std::make_pair(&a, &b);
  auto it = scores_.find(key);
  SimilarityScore s;
  if (it != scores_.end()) {
    s = it->second;
  } else if (a.pts.size() < 3 || b.pts.size() < 3) {
    s.value = 0.0;
    s.flagged = true;
  } else {
    const IcpResult reg = register_shapes(a.pts, b.pts, b.tree, std::max(a.diagonal, b.diagonal), 300, kCloudKeep);
    const double scale = std::max(0.5 * (a.spacing + b.spacing), 1e-12);
    const double dist = mean_closest_distance(a.pts, b.tree, reg.transform, kCloudKeep);
    const double excess = std::max(0.0, dist - b.selfDistance);
    s.value = 1.0 - std::min(1.0, excess / (2.0 * scale));
    s.hull = s.triangle = s.value;
    s.alignment = reg.transform;
    s.flagged = !reg.converged;
    scores_.emplace(key, s);
  }
  if (swapped) s.alignment = s.alignment.inverse();
  return s;
}

ComponentSet CloudSegmenter::segment(const ShapeParams& params) {
  ComponentSet set;
  if (model_.diagonal() <= 1e-8) {
    std::vector<int> all(pos_.size());
    std::iota(all.begin(), all.end(), 0);
    set.components.push_back(make_component(model_, std::move(all), 0));
    set.labels = {0};
    set.seeds = {0};
    set.degenerate = true;
    set.warnings.push_back("all points coincide; single component");
    return set;
  }
  double iterations = std::round(params.num);
  if (iterations > static_cast<double>(model_.size())) {
    set.warnings.push_back("thetaNum exceeds the element count; clamped");
    iterations = static_cast<double>(model_.size());
  }
  const int want = static_cast<int>(std::max(0.0, iterations));
  while (static_cast<int>(planes_.size()) < want && extract_plane()) {
  }
  const int usePlanes = std::min<int>(want, static_cast<int>(planes_.size()));
  for (const auto& c : clusters(usePlanes)) {
    if (static_cast<double>(c.size()) < params.den || c.size() < 3) {
      set.noise.insert(set.noise.end(), c.begin(), c.end());
    } else {
      set.components.push_back(make_component(model_, c, static_cast<int>(set.components.size())));
    }
  }
  std::sort(set.noise.begin(), set.noise.end());
  if (set.components.empty()) throw EmptySegmentationError("every point was discarded as noise");

  std::vector<RigidTransform> toSeed;
  greedy_labels(set, toSeed, [&](int i, int s) -> std::optional<SimilarityScore> {
    SimilarityScore sc = similarity(set.components[i], set.components[s]);
    if (sc.value < params.geo) return std::nullopt;
    return sc;
  });
  assign_frames(model_, set, toSeed);
  return set;
}

}  // namespace

std::unique_ptr<Segmenter> Segmenter::create(const Model& model, std::uint64_t seed) {
  if (model.is_mesh()) return std::make_unique<MeshSegmenter>(model);
  return std::make_unique<CloudSegmenter>(model, seed);
}

ComponentSet segment(const Model& model, const ShapeParams& params, std::uint64_t seed) {
  return Segmenter::create(model, seed)->segment(params);
}

ComponentSet segment_mesh(const Model& model, const ShapeParams& params) {
  if (!model.is_mesh()) throw UnsupportedTypeError("segment_mesh needs a mesh");
  return MeshSegmenter(model).segment(params);
}

ComponentSet segment_cloud(const Model& model, const ShapeParams& params, std::uint64_t seed) {
  if (model.is_mesh()) throw UnsupportedTypeError("segment_cloud needs a point cloud");
  return CloudSegmenter(model, seed).segment(params);
}

SimilarityScore mesh_similarity(const Model& model, const Component& a, const Component& b) {
  if (!model.is_mesh()) throw UnsupportedTypeError("mesh_similarity needs a mesh");
  return MeshSegmenter(model).similarity(a, b);
}

SimilarityScore cloud_similarity(const Model& model, const Component& a, const Component& b) {
  if (model.is_mesh()) throw UnsupportedTypeError("cloud_similarity needs a point cloud");
  return CloudSegmenter(model, 0).similarity(a, b);
}

Component make_component(const Model& model, std::vector<int> elements, int id) {
  if (elements.empty()) throw EmptyModelError("component without elements");
  Component c;
  c.id = id;
  c.elements = std::move(elements);
  c.bbox = model.bbox_of(c.elements);
  c.frame = frame_for(model.positions(c.elements), Mat3::Identity(), &c.localSize);
  return c;
}

std::vector<int> element_labels(const Model& model, const ComponentSet& set) {
  std::vector<int> out(model.size(), -1);
  for (std::size_t i = 0; i < set.components.size(); ++i)
    for (int e : set.components[i].elements) out[e] = set.labels[i];
  return out;
}

void write_segmentation(const std::filesystem::path& path, const Model& model, const ComponentSet& set) {
  ElementLabels labels;
  labels.label = element_labels(model, set);
  const int noiseLabel = set.label_count();
  for (auto& l : labels.label)
    if (l < 0) l = noiseLabel;
  save_model(path, model, &labels);
}

}  // namespace gproc
