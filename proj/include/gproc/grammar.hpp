#pragma once

#include "gproc/geometry.hpp"
#include "gproc/params.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gproc {

inline constexpr int kGrammarVersion = 1;

struct RotationPattern {
  Vec3 axis = Vec3::UnitZ();
  Vec3 center = Vec3::Zero();
  double stepDeg = 0.0;
};

/// One pattern: `produces` placed in the frame of `lhs` at
///   T(a,b,c) = Translate(a*s_u + b*s_v + c*s_w) * RotAbout(center, axis, a*step) * origin
/// for every lattice cell, followed by the free-standing `splitOps`.
struct Rule {
  std::string id;
  std::string lhs;
  std::string produces;
  RigidTransform origin;
  std::array<int, 3> repetition{1, 1, 1};
  std::array<Vec3, 3> spacing{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::array<double, 3> gap{0.0, 0.0, 0.0};  // free space between neighbours along each axis
  std::optional<RotationPattern> rotation;
  std::vector<RigidTransform> splitOps;
  double residual = 0.0;  // max member deviation from its expanded slot (model units)

  int lattice_count() const { return repetition[0] * repetition[1] * repetition[2]; }
  int expanded_count() const { return lattice_count() + static_cast<int>(splitOps.size()); }
  /// Child placements in the lhs frame: lattice cells in (a,b,c) row-major order, then split ops.
  std::vector<RigidTransform> expand() const;
};

struct GrammarSymbol {
  std::string id;
  int label = 0;
  bool terminal = true;
  bool synthetic = false;
  Vec3 size = Vec3::Zero();  // local bbox is [0, size]
  std::string geometryRef;   // sidecar file relative to the grammar file
  std::shared_ptr<const Model> geometry;  // elements in the local frame; null for synthetic symbols
};

struct GrammarValues {
  double alp = 0.0;  // |Sigma|
  double non = 0.0;  // |N| without a synthetic root
  double fan = 0.0;  // mean expanded instance count per rule
  double rep = 0.0;  // instances in the full expansion (synthetic root excluded)

  std::array<double, 4> to_array() const { return {alp, non, fan, rep}; }
  static GrammarValues from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  static const std::array<const char*, 4>& names();
  bool operator==(const GrammarValues&) const = default;
};

struct GrammarMeta {
  ParamVector theta;
  GrammarValues gamma;
  std::uint64_t seed = 0;
  DataType dataType = DataType::Mesh;
  RigidTransform axiomFrame;
  double residual = 0.0;
};

struct SplitGrammar {
  int version = kGrammarVersion;
  std::string axiom;
  std::vector<GrammarSymbol> terminals;
  std::vector<GrammarSymbol> nonterminals;
  std::vector<Rule> rules;
  GrammarMeta meta;

  const GrammarSymbol* find_symbol(const std::string& id) const;
  const Rule* find_rule(const std::string& ref) const;
  /// Throws Error unless symbols are unique, every rule references known
  /// symbols, terminals have no rules, non-terminals have at least one, and the
  /// axiom derives terminals without cycles.
  void check_well_formed() const;
};

/// Exact grammar values from the grammar structure.
GrammarValues evaluate(const SplitGrammar& grammar);

struct RuleOverride {
  std::optional<std::array<int, 3>> repetition;
  std::optional<std::array<Vec3, 3>> spacing;
};

struct DerivedInstance {
  std::string symbol;
  int label = 0;
  RigidTransform frame;  // world placement of the symbol's local frame
  BoundingBox bbox;      // world AABB of the instantiated geometry (local box for synthetic symbols)
  int parent = -1;
  std::string rule;      // producing rule id; empty for the axiom
};

struct Derivation {
  std::vector<DerivedInstance> instances;
  std::optional<Model> model;      // all instantiated geometry
  std::vector<int> elementLabels;  // per element of `model`
  std::vector<int> elementInstance;
};

/// Expands the axiom. Overrides are keyed by rule id or by the produced symbol id.
/// Throws Error on unknown override keys or repetition < 1.
Derivation derive(const SplitGrammar& grammar, const std::map<std::string, RuleOverride>& overrides = {});

/// Deterministic single-line JSON text (fixed field order, 9 significant digits).
std::string serialize(const SplitGrammar& grammar);
/// Throws ValidationError naming the JSON path of the first violation. Geometry
/// payloads are not loaded (see load_grammar).
SplitGrammar parse_grammar(const std::string& text);
nlohmann::ordered_json grammar_to_json(const SplitGrammar& grammar);
SplitGrammar grammar_from_json(const nlohmann::ordered_json& j);

/// Writes the JSON file plus one sidecar OBJ (meshes) or PLY (clouds) per symbol
/// with geometry, named "<stem>.<symbol>.<ext>" next to it. Returns all written paths.
std::vector<std::filesystem::path> save_grammar(const std::filesystem::path& path, SplitGrammar grammar);
SplitGrammar load_grammar(const std::filesystem::path& path);

/// Same symbols, rules, parameters and metadata (geometry payloads ignored).
bool structurally_equal(const SplitGrammar& a, const SplitGrammar& b);

}  // namespace gproc
