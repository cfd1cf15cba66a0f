#include <doctest.h>

#include "gproc/completion.hpp"
#include "gproc/fixtures.hpp"
#include "gproc/segmentation.hpp"

#include <numeric>

using namespace gproc;

namespace {

std::vector<int> range(int lo, int hi) {
  std::vector<int> v(hi - lo);
  std::iota(v.begin(), v.end(), lo);
  return v;
}

/// Components for a cloud made of equally sized consecutive instances, all
/// with the same label.
ComponentSet instance_components(const Model& cloud, int count, std::vector<int> labels = {}) {
  ComponentSet set;
  const int n = static_cast<int>(cloud.size()) / count;
  for (int k = 0; k < count; ++k) {
    set.components.push_back(make_component(cloud, range(k * n, (k + 1) * n), k));
    set.labels.push_back(labels.empty() ? 0 : labels[k]);
  }
  const int labelCount = *std::max_element(set.labels.begin(), set.labels.end()) + 1;
  for (int l = 0; l < labelCount; ++l) {
    set.seeds.push_back(static_cast<int>(std::find(set.labels.begin(), set.labels.end(), l) - set.labels.begin()));
  }
  return set;
}

struct Completed {
  InstanceTree tree;
  std::vector<ConsensusModel> models;
  Model out;
};

Completed run(const Model& cloud, const ComponentSet& set) {
  InstanceTree tree = build_tree(set, cloud.bbox());
  const auto reps = canonicalize_join(tree, refine_labels(tree, TreeParams{}));
  auto models = build_consensus_models(cloud, tree, reps, set);
  Model out = apply_consensus(cloud, tree, set, models);
  return {std::move(tree), std::move(models), std::move(out)};
}

std::vector<ConsensusMember> ablation_members(const AblationFixture& fx) {
  const int count = static_cast<int>(fx.offsets.size());
  const int n = static_cast<int>(fx.cloud.size()) / count;
  std::vector<ConsensusMember> members;
  for (int k = 0; k < count; ++k) {
    ConsensusMember m;
    m.node = k + 1;
    const auto idx = range(k * n, (k + 1) * n);
    m.frame = make_component(fx.cloud, idx, k).frame;
    for (int e : idx) m.points.push_back(fx.cloud.points()[e]);
    members.push_back(std::move(m));
  }
  return members;
}

}  // namespace

TEST_CASE("a single member is its own consensus") {
  const auto fx = ablation_cloud(1, 0.2, 3);
  const auto members = ablation_members(fx);
  const ConsensusModel cm = build_consensus(members, 4);
  CHECK(cm.label == 4);
  CHECK(cm.medoid == members[0].node);
  REQUIRE(cm.points.size() == members[0].points.size());
  const RigidTransform back = cm.alignment.at(members[0].node).inverse();
  for (std::size_t i = 0; i < cm.points.size(); ++i) {
    CHECK((back.apply(cm.points[i].p) - members[0].points[i].p).norm() < 1e-12);
  }
  CHECK(cm.excluded.empty());
  CHECK_THROWS_AS(build_consensus(std::span<const ConsensusMember>{}, 0), ValidationError);
}

TEST_CASE("consensus of the ablated instances recovers the full shape") {
  const auto fx = ablation_cloud();
  const auto members = ablation_members(fx);
  const ConsensusModel cm = build_consensus(members, 0);
  CHECK(cm.excluded.empty());
  CHECK(cm.alignment.size() == members.size());
  CHECK(cm.points.size() >= cm.maxMemberPoints);
  for (const auto& [node, r] : cm.residual) CHECK(r <= cm.residualBound);

  // Alignments reproduce the known offsets between instances.
  const Vec3 medOffset = fx.offsets[cm.medoid - 1];
  for (const auto& m : members) {
    const Vec3 shift = cm.alignment.at(cm.medoid).inverse().apply(cm.alignment.at(m.node).apply(Vec3::Zero()));
    CHECK((shift - (medOffset - fx.offsets[m.node - 1])).norm() < 1e-3);
  }

  // Placed at any slot, the consensus covers the hole-free instance.
  std::vector<Point> truth, placed;
  for (const auto& p : fx.instance) truth.push_back(Point{p.p + fx.offsets[0], std::nullopt});
  const RigidTransform toWorld = cm.alignment.at(members[0].node).inverse();
  for (const auto& p : cm.points) placed.push_back(Point{toWorld.apply(p.p), std::nullopt});
  const Model truthModel = Model::cloud(truth);
  const double voxel = 0.01 * fx.groundTruth.diagonal();
  CHECK(voxel_coverage(truthModel, Model::cloud(placed), voxel) >= 0.95);
  CHECK(voxel_coverage(truthModel, Model::cloud(members[0].points), voxel) < 0.95);
}

TEST_CASE("an unrelated member is excluded") {
  const auto fx = ablation_cloud(5, 0.2, 3);
  auto members = ablation_members(fx);
  ConsensusMember odd;
  odd.node = 99;
  odd.points = sample_sphere(Vec3(20, 0, 0), 0.5, static_cast<int>(members[0].points.size()), 4);
  std::vector<Vec3> pos;
  for (const auto& p : odd.points) pos.push_back(p.p);
  odd.frame = RigidTransform::translate(bbox_of(std::span<const Vec3>(pos)).min);
  members.push_back(odd);
  const ConsensusModel cm = build_consensus(members, 0, 0);
  REQUIRE(cm.excluded.size() == 1);
  CHECK(cm.excluded[0] == 99);
  CHECK(cm.alignment.count(99) == 0);
  CHECK(cm.residual.at(99) > cm.residualBound);
  CHECK(cm.alignment.size() == 5);
}

TEST_CASE("completing the ablation cloud") {
  const auto fx = ablation_cloud();
  const ComponentSet set = instance_components(fx.cloud, 6);
  const Completed c = run(fx.cloud, set);
  REQUIRE(c.models.size() == 1);
  const CompletionReport report = completion_stats(fx.cloud, c.out, c.models);
  CHECK(report.gainPercent >= 15.0);
  CHECK(report.gainPercent <= 30.0);
  CHECK(report.coverageKept == 1.0);
  CHECK_FALSE(report.lowDensityWarning);
  CHECK(report.labelCoverageBefore.at(c.models[0].label) < 1.0);

  const double voxel = 0.01 * fx.groundTruth.diagonal();
  CHECK(voxel_coverage(fx.groundTruth, c.out, voxel) >= 0.95);
  CHECK(voxel_coverage(fx.cloud, c.out, voxel) == 1.0);

  SUBCASE("a second application barely changes the cloud") {
    const ComponentSet again = instance_components(c.out, 6);
    const Completed twice = run(c.out, again);
    const double change = std::abs(static_cast<double>(twice.out.size()) - static_cast<double>(c.out.size())) /
                          static_cast<double>(c.out.size());
    CHECK(change < 0.01);
  }
  SUBCASE("the report serializes") {
    const auto j = report.to_json();
    CHECK(j["pointsBefore"] == fx.cloud.size());
    CHECK(j["density"]["histogramBefore"].size() == 16);
    CHECK(report.to_text().find("points: ") == 0);
  }
}

TEST_CASE("a cloud without repeated labels passes through") {
  std::vector<Point> pts = sample_box_surface(Vec3::Zero(), Vec3::Ones(), 0.05, 2);
  const auto sphere = sample_sphere(Vec3(3, 0, 0), 0.5, static_cast<int>(pts.size()), 3);
  pts.insert(pts.end(), sphere.begin(), sphere.end());
  const Model cloud = Model::cloud(pts);
  const ComponentSet set = instance_components(cloud, 2, {0, 1});
  const Completed c = run(cloud, set);
  CHECK(c.models.empty());
  REQUIRE(c.out.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) CHECK(c.out.points()[i].p == cloud.points()[i].p);
}

TEST_CASE("completion statistics") {
  const Model cloud = Model::cloud(sample_box_surface(Vec3::Zero(), Vec3::Ones(), 0.04, 1));
  const CompletionReport same = completion_stats(cloud, cloud);
  CHECK(same.gainPercent == 0.0);
  CHECK(same.coverageKept == 1.0);
  CHECK_FALSE(same.lowDensityWarning);

  std::vector<Point> sparse;
  for (std::size_t i = 0; i < cloud.size(); i += 3) sparse.push_back(cloud.points()[i]);
  const CompletionReport thin = completion_stats(cloud, Model::cloud(sparse));
  CHECK(thin.gainPercent < 0.0);
  CHECK(thin.lowDensityWarning);
  CHECK(thin.medianDensityAfter < thin.medianDensityBefore);

  CHECK_THROWS_AS(completion_stats(unit_cube(), cloud), ValidationError);
  CHECK_THROWS_AS(voxel_coverage(cloud, cloud, 0.0), ValidationError);
}

TEST_CASE("voxel coverage") {
  const Model a = Model::cloud({Point{Vec3(0.05, 0.05, 0.05), std::nullopt}, Point{Vec3(0.55, 0.05, 0.05), std::nullopt}});
  const Model b = Model::cloud({Point{Vec3(0.06, 0.07, 0.05), std::nullopt}});
  CHECK(voxel_coverage(a, b, 0.1) == doctest::Approx(0.5));
  CHECK(voxel_coverage(a, a, 0.1) == 1.0);
}

TEST_CASE("complete_cloud rejects meshes") {
  const Model m = unit_cube();
  CHECK_THROWS_AS(complete_cloud(m, default_params(m)), ValidationError);
}
