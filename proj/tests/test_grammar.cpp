#include <doctest.h>

#include "gproc/fixtures.hpp"
#include "gproc/grammar.hpp"
#include "gproc/model_io.hpp"
#include "gproc/pattern.hpp"
#include "gproc/segmentation.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>

using namespace gproc;

namespace {

struct Built {
  Model model;
  ComponentSet set;
  InstanceTree tree;
  SplitGrammar grammar;
};

Built build(Model m, ParamVector p) {
  ComponentSet set = segment(m, p.shape);
  InstanceTree tree = build_tree(set, m.bbox());
  auto reps = canonicalize_join(tree, refine_labels(tree, p.tree));
  auto rules = extract_patterns(tree, reps, p.pattern);
  SplitGrammar g = export_grammar(tree, reps, std::move(rules), m, set);
  return {std::move(m), std::move(set), std::move(tree), std::move(g)};
}

Built build(Model m) {
  const ParamVector p = default_params(m);
  return build(std::move(m), p);
}

const Rule& rule_producing(const SplitGrammar& g, const std::string& symbol) {
  const Rule* r = g.find_rule(symbol);
  REQUIRE(r != nullptr);
  return *r;
}

std::string symbol_with_size(const SplitGrammar& g, const Vec3& size) {
  for (const auto* list : {&g.terminals, &g.nonterminals}) {
    for (const auto& s : *list) {
      if ((s.size - size).norm() < 1e-6) return s.id;
    }
  }
  return {};
}

// Largest distance between matched boxes, matching every source component
// bbox to the closest unused derived bbox.
double bbox_reproduction_error(const std::vector<BoundingBox>& source, std::vector<BoundingBox> derived) {
  double worst = 0.0;
  for (const auto& s : source) {
    auto best = derived.end();
    double bestD = std::numeric_limits<double>::infinity();
    for (auto it = derived.begin(); it != derived.end(); ++it) {
      const double d = std::max((it->min - s.min).cwiseAbs().maxCoeff(), (it->max - s.max).cwiseAbs().maxCoeff());
      if (d < bestD) {
        bestD = d;
        best = it;
      }
    }
    if (best == derived.end()) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, bestD);
    derived.erase(best);
  }
  return derived.empty() ? worst : std::numeric_limits<double>::infinity();
}

std::vector<BoundingBox> derived_boxes(const Derivation& d, const SplitGrammar& g) {
  std::vector<BoundingBox> out;
  for (const auto& inst : d.instances) {
    if (!g.find_symbol(inst.symbol)->synthetic) out.push_back(inst.bbox);
  }
  return out;
}

std::vector<BoundingBox> source_boxes(const ComponentSet& set) {
  std::vector<BoundingBox> out;
  for (const auto& c : set.components) out.push_back(c.bbox);
  return out;
}

int count_symbol(const Derivation& d, const std::string& id) {
  return static_cast<int>(std::count_if(d.instances.begin(), d.instances.end(),
                                        [&](const DerivedInstance& i) { return i.symbol == id; }));
}

std::vector<RigidTransform> grid_slots(int nu, int nv, const Vec3& su, const Vec3& sv, const Vec3& o) {
  std::vector<RigidTransform> out;
  for (int a = 0; a < nu; ++a) {
    for (int b = 0; b < nv; ++b) out.push_back(RigidTransform::translate(o + a * su + b * sv));
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gproc_test_grammar_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("lattice fit recovers grids") {
  SUBCASE("2x3 translation grid in shuffled order") {
    auto slots = grid_slots(2, 3, Vec3(2.2, 0, 0), Vec3(0, 2.2, 0), Vec3(1, 1, 0.2));
    std::mt19937 rng(4);
    std::shuffle(slots.begin(), slots.end(), rng);
    const LatticeFit f = fit_lattice(slots, 0.05, 0.05, 10.0);
    CHECK(f.repetition == std::array<int, 3>{2, 3, 1});
    CHECK((f.spacing[0] - Vec3(2.2, 0, 0)).norm() < 1e-9);
    CHECK((f.spacing[1] - Vec3(0, 2.2, 0)).norm() < 1e-9);
    CHECK((f.origin.translation - Vec3(1, 1, 0.2)).norm() < 1e-9);
    CHECK(f.leftovers.empty());
  }
  SUBCASE("missing cell leaves the largest complete box plus split operations") {
    auto slots = grid_slots(3, 4, Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3::Zero());
    slots.erase(slots.begin() + 3);  // cell (0, 3)
    const LatticeFit f = fit_lattice(slots, 0.05, 0.05, 5.0);
    CHECK(f.repetition[0] * f.repetition[1] * f.repetition[2] == 9);
    CHECK(f.cells.size() + f.leftovers.size() == slots.size());
    CHECK(f.leftovers.size() == 2);
  }
  SUBCASE("placement noise within tolerance is absorbed") {
    auto slots = grid_slots(4, 1, Vec3(2, 0, 0), Vec3::Zero(), Vec3::Zero());
    slots[1].translation += Vec3(0.03, -0.02, 0);
    slots[2].translation += Vec3(-0.02, 0.03, 0);
    const LatticeFit f = fit_lattice(slots, 0.05, 0.05, 8.0);
    CHECK(f.repetition == std::array<int, 3>{4, 1, 1});
    CHECK(std::abs(f.spacing[0].x() - 2.0) < 0.05);
  }
  SUBCASE("three axes") {
    std::vector<RigidTransform> slots;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 2; ++c) slots.push_back(RigidTransform::translate(Vec3(1.5 * a, 2.0 * b, 3.0 * c)));
    const LatticeFit f = fit_lattice(slots, 0.05, 0.05, 10.0);
    CHECK(f.repetition == std::array<int, 3>{2, 3, 2});
  }
  SUBCASE("rotational lattice about an off-origin axis") {
    std::vector<RigidTransform> slots;
    const Vec3 c(1, 2, 0);
    for (int k = 0; k < 5; ++k) {
      slots.push_back(RigidTransform::translate(c) * RigidTransform::rotate(Vec3::UnitZ(), k * 0.4) *
                      RigidTransform::translate(Vec3(2, 0, 0.5)));
    }
    std::swap(slots[0], slots[3]);
    const LatticeFit f = fit_lattice(slots, 0.05, 0.05, 10.0);
    REQUIRE(f.rotation.has_value());
    CHECK(f.repetition[0] == 5);
    CHECK(std::abs(f.rotation->stepDeg - 0.4 * 180.0 / std::numbers::pi) < 1e-6);
    Rule r;
    r.origin = f.origin;
    r.repetition = f.repetition;
    r.spacing = f.spacing;
    r.rotation = f.rotation;
    const auto placed = r.expand();
    for (std::size_t k = 0; k < f.cells.size(); ++k) {
      CHECK(placed[k].approx_equal(slots[f.cells[k]], 1e-9));
    }
  }
  SUBCASE("a single placement") {
    const LatticeFit f = fit_lattice({RigidTransform::translate(Vec3(1, 2, 3))}, 0.05, 0.05, 1.0);
    CHECK(f.repetition == std::array<int, 3>{1, 1, 1});
    CHECK(f.cells == std::vector<int>{0});
  }
}

TEST_CASE("facade grammar") {
  const Built b = build(facade_fixture());
  const SplitGrammar& g = b.grammar;
  const std::string window = symbol_with_size(g, Vec3(1.2, 1.6, 0.2));
  const std::string pane = symbol_with_size(g, Vec3(0.5, 0.7, 0.1));
  REQUIRE(!window.empty());
  REQUIRE(!pane.empty());

  const Rule& windows = rule_producing(g, window);
  CHECK(windows.repetition == std::array<int, 3>{2, 3, 1});
  CHECK((windows.spacing[0] - Vec3(2.2, 0, 0)).norm() < 1e-9);
  CHECK((windows.spacing[1] - Vec3(0, 2.2, 0)).norm() < 1e-9);
  // Oracle: gap = step - window extent along the step.
  CHECK(windows.gap[0] == doctest::Approx(2.2 - 1.2).epsilon(1e-9));
  CHECK(windows.gap[1] == doctest::Approx(2.2 - 1.6).epsilon(1e-9));

  const Rule& panes = rule_producing(g, pane);
  CHECK(panes.lhs == window);
  CHECK(panes.repetition == std::array<int, 3>{2, 2, 1});
  CHECK(std::abs(panes.gap[0]) < 1e-9);
  CHECK(std::abs(panes.gap[1]) < 1e-9);

  // Oracle values from the segmentation alone: distinct leaf labels, non-leaf
  // labels, rule fan-out and the number of components.
  const GrammarValues v = evaluate(g);
  CHECK(v == GrammarValues{1, 2, 5, static_cast<double>(b.set.component_count())});
  CHECK(v == g.meta.gamma);
}

TEST_CASE("grammar values of special cases") {
  SUBCASE("a single component is an axiom-only grammar") {
    const Built b = build(unit_cube());
    CHECK(evaluate(b.grammar) == GrammarValues{1, 0, 0, 1});
    CHECK(b.grammar.rules.empty());
    CHECK(b.grammar.find_symbol(b.grammar.axiom)->terminal);
  }
  SUBCASE("a synthetic root is not counted") {
    const Built b = build(rotational_fixture());
    CHECK(b.grammar.axiom == "root");
    const GrammarValues v = evaluate(b.grammar);
    CHECK(v.non == 0);
    CHECK(v.rep == 7);
    CHECK(v.alp == 2);
  }
}

TEST_CASE("rotational and helical rules") {
  SUBCASE("six blocks at thirty degrees") {
    const Built b = build(rotational_fixture(6, 30.0));
    const Rule* r = nullptr;
    for (const auto& rule : b.grammar.rules) {
      if (rule.rotation) r = &rule;
    }
    REQUIRE(r != nullptr);
    CHECK(r->repetition[0] == 6);
    CHECK(r->rotation->stepDeg == doctest::Approx(30.0).epsilon(1e-9));
    CHECK(std::abs(std::abs(r->rotation->axis.z()) - 1.0) < 1e-9);
    // The fixture turns about the world z axis; the centre is stored in the root frame.
    CHECK((b.grammar.meta.axiomFrame.apply(r->rotation->center).head<2>()).norm() < 1e-9);
  }
  SUBCASE("twisted tower") {
    const Built b = build(tower_fixture(5, 15.0));
    const Rule* r = nullptr;
    for (const auto& rule : b.grammar.rules) {
      if (rule.rotation) r = &rule;
    }
    REQUIRE(r != nullptr);
    CHECK(r->repetition[0] == 5);
    CHECK(r->rotation->stepDeg == doctest::Approx(15.0).epsilon(1e-9));
    CHECK((r->spacing[0] - Vec3(0, 0, 1.2)).norm() < 1e-9);
  }
}

TEST_CASE("derivation reproduces the input") {
  for (const char* name : {"facade", "rotational", "tower", "two-type", "irregular"}) {
    CAPTURE(name);
    const std::string n = name;
    Model m = n == "facade"       ? facade_fixture()
              : n == "rotational" ? rotational_fixture()
              : n == "tower"      ? tower_fixture()
              : n == "two-type"   ? two_type_facade()
                                  : irregular_shapes();
    const Built b = build(std::move(m));
    const Derivation d = derive(b.grammar);
    const double D = b.model.diagonal();
    CHECK(bbox_reproduction_error(source_boxes(b.set), derived_boxes(d, b.grammar)) <= 1e-6 * D + b.grammar.meta.residual);
    REQUIRE(d.model.has_value());
    CHECK(d.model->size() == b.model.size());
    CHECK(d.elementLabels.size() == d.model->size());
  }
}

TEST_CASE("derivation overrides") {
  const Built b = build(facade_fixture());
  const SplitGrammar& g = b.grammar;
  const std::string window = symbol_with_size(g, Vec3(1.2, 1.6, 0.2));
  const std::string pane = symbol_with_size(g, Vec3(0.5, 0.7, 0.1));
  const Rule& windows = rule_producing(g, window);

  SUBCASE("by rule id") {
    const Derivation d = derive(g, {{windows.id, RuleOverride{std::array<int, 3>{4, 5, 1}, std::nullopt}}});
    CHECK(count_symbol(d, window) == 20);
    CHECK(count_symbol(d, pane) == 80);
    // Oracle: the top-right window sits at origin + 3 su + 4 sv.
    const Vec3 expect = g.meta.axiomFrame.apply(windows.origin.translation + 3 * windows.spacing[0] + 4 * windows.spacing[1]);
    bool found = false;
    for (const auto& inst : d.instances) {
      if (inst.symbol == window && (inst.frame.translation - expect).norm() < 1e-9) found = true;
    }
    CHECK(found);
  }
  SUBCASE("by produced symbol with new spacing") {
    std::array<Vec3, 3> sp{Vec3(3, 0, 0), Vec3(0, 3, 0), Vec3::Zero()};
    const Derivation d = derive(g, {{window, RuleOverride{std::nullopt, sp}}});
    CHECK(count_symbol(d, window) == 6);
    BoundingBox all;
    for (const auto& inst : d.instances) {
      if (inst.symbol == window) all.expand(inst.bbox);
    }
    CHECK(all.size().x() == doctest::Approx(3 + 1.2));
    CHECK(all.size().y() == doctest::Approx(6 + 1.6));
  }
  SUBCASE("invalid overrides") {
    CHECK_THROWS_AS(derive(g, {{windows.id, RuleOverride{std::array<int, 3>{0, 1, 1}, std::nullopt}}}), ValidationError);
    CHECK_THROWS_AS(derive(g, {{"nope", RuleOverride{}}}), Error);
  }
  CHECK(evaluate(g) == GrammarValues{1, 2, 5, 31});
}

TEST_CASE("serialization round trip") {
  for (const char* name : {"facade", "tower", "irregular"}) {
    CAPTURE(name);
    const std::string n = name;
    const Built b = build(n == "facade" ? facade_fixture() : n == "tower" ? tower_fixture() : irregular_shapes());
    const std::string text = serialize(b.grammar);
    const SplitGrammar back = parse_grammar(text);
    CHECK(structurally_equal(back, b.grammar));
    CHECK(serialize(back) == text);
    CHECK(evaluate(back) == evaluate(b.grammar));
    const Derivation d0 = derive(b.grammar), d1 = derive(back);
    REQUIRE(d0.instances.size() == d1.instances.size());
    for (std::size_t i = 0; i < d0.instances.size(); ++i) {
      CHECK(d0.instances[i].frame.approx_equal(d1.instances[i].frame, 1e-7 * b.model.diagonal()));
    }
  }
  SUBCASE("field order is fixed") {
    const auto j = nlohmann::ordered_json::parse(serialize(build(facade_fixture()).grammar));
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"version", "axiom", "terminals", "nonterminals", "rules", "meta"});
  }
}

TEST_CASE("parse validation names the offending path") {
  const std::string text = serialize(build(facade_fixture()).grammar);
  const auto expect_path = [&](const std::function<void(nlohmann::ordered_json&)>& edit, const std::string& path) {
    auto j = nlohmann::ordered_json::parse(text);
    edit(j);
    try {
      parse_grammar(j.dump());
      FAIL("expected a validation error at " << path);
    } catch (const ValidationError& e) {
      CHECK(e.path() == path);
    }
  };
  expect_path([](auto& j) { j["rules"][0]["repetition"][1] = 0; }, "/rules/0/repetition/1");
  expect_path([](auto& j) { j["rules"][1]["repetition"][0] = -2; }, "/rules/1/repetition/0");
  expect_path([](auto& j) { j["rules"][0].erase("spacing"); }, "/rules/0/spacing");
  expect_path([](auto& j) { j["rules"][0]["lhs"] = "zz"; }, "/rules/0/lhs");
  expect_path([](auto& j) { j["version"] = 7; }, "/version");
  expect_path([](auto& j) { j["axiom"] = "missing"; }, "/axiom");
  expect_path([](auto& j) { j["rules"][0]["origin"]["rotation"][0] = 3.0; }, "/rules/0/origin/rotation");
  expect_path([](auto& j) { j["meta"]["theta"]["geo"] = "x"; }, "/meta/theta/geo");
  expect_path([](auto& j) { j["terminals"][0]["bbox"]["max"] = {1, 2}; }, "/terminals/0/bbox/max");
  CHECK_THROWS_AS(parse_grammar("{not json"), ValidationError);
}

TEST_CASE("well-formedness") {
  SplitGrammar g = build(facade_fixture()).grammar;
  CHECK_NOTHROW(g.check_well_formed());
  SUBCASE("cycles") {
    Rule back = g.rules.back();
    back.id = "cycle";
    back.lhs = g.rules.back().lhs;
    back.produces = g.axiom;
    g.rules.push_back(back);
    CHECK_THROWS_AS(g.check_well_formed(), Error);
  }
  SUBCASE("non-terminal without a rule") {
    g.rules.pop_back();
    CHECK_THROWS_AS(g.check_well_formed(), Error);
  }
  SUBCASE("terminal on a left-hand side") {
    g.rules.back().lhs = g.terminals.front().id;
    CHECK_THROWS_AS(g.check_well_formed(), Error);
  }
}

TEST_CASE("save and load with geometry sidecars") {
  const auto dir = temp_dir("sidecars");
  SUBCASE("mesh") {
    const Built b = build(facade_fixture());
    const auto written = save_grammar(dir / "facade.json", b.grammar);
    CHECK(written.size() == 1 + b.grammar.terminals.size() + b.grammar.nonterminals.size());
    const SplitGrammar back = load_grammar(dir / "facade.json");
    CHECK(structurally_equal(back, b.grammar));
    for (const auto& s : back.terminals) CHECK(s.geometry != nullptr);
    const Derivation d = derive(back);
    REQUIRE(d.model.has_value());
    CHECK(d.model->size() == b.model.size());
    CHECK(bbox_reproduction_error(source_boxes(b.set), derived_boxes(d, back)) <= 1e-6 * b.model.diagonal());
    std::filesystem::remove(dir / "facade.t0.obj");
    CHECK_THROWS_AS(load_grammar(dir / "facade.json"), Error);
  }
  SUBCASE("point cloud") {
    const Built b = build(two_cube_cloud());
    save_grammar(dir / "cubes.json", b.grammar);
    const SplitGrammar back = load_grammar(dir / "cubes.json");
    CHECK(back.meta.dataType == DataType::PointCloud);
    const Derivation d = derive(back);
    REQUIRE(d.model.has_value());
    CHECK(d.model->type() == DataType::PointCloud);
    CHECK(d.model->size() + b.set.noise.size() == b.model.size());
  }
  SUBCASE("identical inputs write identical bytes") {
    const Built a = build(facade_fixture()), b = build(facade_fixture());
    save_grammar(dir / "a" / "g.json", a.grammar);
    save_grammar(dir / "b" / "g.json", b.grammar);
    for (const char* f : {"g.json", "g.t0.obj", "g.n0.obj"}) {
      std::ifstream x(dir / "a" / f), y(dir / "b" / f);
      const std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
      CHECK(!sx.empty());
      CHECK(sx == sy);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("grid compresses to one rule") {
  const Built b = build(quad_grid(10, 10));
  CHECK(b.grammar.rules.size() == 1);
  CHECK(b.grammar.rules[0].lattice_count() == 100);
  CHECK(b.grammar.rules[0].splitOps.empty());
  const std::size_t grammarBytes = serialize(b.grammar).size() + to_obj_string(*b.grammar.terminals[0].geometry).size() +
                                   to_obj_string(*b.grammar.nonterminals[0].geometry).size();
  CHECK(grammarBytes * 2 < to_obj_string(b.model).size());
}
