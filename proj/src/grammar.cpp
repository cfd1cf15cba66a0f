#include "gproc/grammar.hpp"

#include "gproc/instance_tree.hpp"
#include "gproc/model_io.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace gproc {

using ojson = nlohmann::ordered_json;

const std::array<const char*, 4>& GrammarValues::names() {
  static const std::array<const char*, 4> n{"alp", "non", "fan", "rep"};
  return n;
}

const GrammarSymbol* SplitGrammar::find_symbol(const std::string& id) const {
  for (const auto* list : {&terminals, &nonterminals}) {
    for (const auto& s : *list) {
      if (s.id == id) return &s;
    }
  }
  return nullptr;
}

const Rule* SplitGrammar::find_rule(const std::string& ref) const {
  for (const auto& r : rules) {
    if (r.id == ref) return &r;
  }
  for (const auto& r : rules) {
    if (r.produces == ref) return &r;
  }
  return nullptr;
}

void SplitGrammar::check_well_formed() const {
  std::set<std::string> ids;
  for (const auto* list : {&terminals, &nonterminals}) {
    for (const auto& s : *list) {
      if (s.id.empty()) throw Error("symbol with an empty id");
      if (!ids.insert(s.id).second) throw Error("duplicate symbol id '" + s.id + "'");
    }
  }
  if (!find_symbol(axiom)) throw Error("axiom '" + axiom + "' is not a symbol");
  std::set<std::string> ruleIds;
  std::map<std::string, std::vector<std::string>> produces;
  for (const auto& r : rules) {
    if (!ruleIds.insert(r.id).second) throw Error("duplicate rule id '" + r.id + "'");
    const auto* lhs = find_symbol(r.lhs);
    if (!lhs) throw Error("rule " + r.id + ": unknown lhs '" + r.lhs + "'");
    if (lhs->terminal) throw Error("rule " + r.id + ": terminal '" + r.lhs + "' cannot be rewritten");
    if (!find_symbol(r.produces)) throw Error("rule " + r.id + ": unknown symbol '" + r.produces + "'");
    for (int k : r.repetition) {
      if (k < 1) throw Error("rule " + r.id + ": repetition must be >= 1");
    }
    produces[r.lhs].push_back(r.produces);
  }
  for (const auto& s : nonterminals) {
    if (!produces.count(s.id)) throw Error("non-terminal '" + s.id + "' has no rule");
  }
  // Cycle check by depth-first search from the axiom.
  std::map<std::string, int> state;
  const std::function<void(const std::string&)> visit = [&](const std::string& id) {
    state[id] = 1;
    for (const auto& c : produces[id]) {
      if (state[c] == 1) throw Error("cyclic derivation through '" + c + "'");
      if (state[c] == 0) visit(c);
    }
    state[id] = 2;
  };
  visit(axiom);
}

GrammarValues evaluate(const SplitGrammar& grammar) {
  grammar.check_well_formed();
  GrammarValues v;
  v.alp = static_cast<double>(grammar.terminals.size());
  for (const auto& s : grammar.nonterminals) {
    if (!s.synthetic) v.non += 1.0;
  }
  double total = 0.0;
  for (const auto& r : grammar.rules) total += r.expanded_count();
  v.fan = grammar.rules.empty() ? 0.0 : total / static_cast<double>(grammar.rules.size());

  std::map<std::string, double> memo;
  const std::function<double(const std::string&)> count = [&](const std::string& id) -> double {
    if (const auto it = memo.find(id); it != memo.end()) return it->second;
    double c = grammar.find_symbol(id)->synthetic ? 0.0 : 1.0;
    for (const auto& r : grammar.rules) {
      if (r.lhs == id) c += r.expanded_count() * count(r.produces);
    }
    return memo[id] = c;
  };
  v.rep = count(grammar.axiom);
  return v;
}

// ---------------------------------------------------------------------------
// Derivation
// ---------------------------------------------------------------------------

Derivation derive(const SplitGrammar& grammar, const std::map<std::string, RuleOverride>& overrides) {
  grammar.check_well_formed();
  std::vector<Rule> rules = grammar.rules;
  for (const auto& [key, ov] : overrides) {
    std::vector<Rule*> targets;
    for (auto& r : rules) {
      if (r.id == key) targets.push_back(&r);
    }
    if (targets.empty()) {
      for (auto& r : rules) {
        if (r.produces == key) targets.push_back(&r);
      }
    }
    if (targets.empty()) throw Error("override '" + key + "' matches no rule or produced symbol");
    for (Rule* r : targets) {
      if (ov.repetition) {
        for (int k = 0; k < 3; ++k) {
          if ((*ov.repetition)[k] < 1) {
            throw ValidationError("/overrides/" + key + "/repetition/" + std::to_string(k), "must be >= 1");
          }
        }
        r->repetition = *ov.repetition;
      }
      if (ov.spacing) r->spacing = *ov.spacing;
    }
  }
  std::map<std::string, std::vector<const Rule*>> byLhs;
  for (const auto& r : rules) byLhs[r.lhs].push_back(&r);

  constexpr std::size_t kMaxInstances = 5'000'000;
  Derivation out;
  std::vector<Triangle> tris;
  std::vector<Point> pts;
  int vidBase = 0;
  RigidTransform axiomFrame = grammar.meta.axiomFrame;
  axiomFrame.rotation = orthonormalize(axiomFrame.rotation);
  out.instances.push_back({grammar.axiom, grammar.find_symbol(grammar.axiom)->label, axiomFrame, {}, -1, ""});
  for (std::size_t i = 0; i < out.instances.size(); ++i) {
    const DerivedInstance inst = out.instances[i];
    const GrammarSymbol& sym = *grammar.find_symbol(inst.symbol);
    BoundingBox box;
    if (sym.geometry) {
      const Model& g = *sym.geometry;
      if (g.is_mesh()) {
        int maxVid = -1;
        for (Triangle t : g.triangles()) {
          for (int k = 0; k < 3; ++k) {
            t.v[k] = inst.frame.apply(t.v[k]);
            box.expand(t.v[k]);
            if (t.vid[k] >= 0) {
              maxVid = std::max(maxVid, t.vid[k]);
              t.vid[k] += vidBase;
            }
          }
          tris.push_back(t);
          out.elementLabels.push_back(sym.label);
          out.elementInstance.push_back(static_cast<int>(i));
        }
        vidBase += maxVid + 1;
      } else {
        for (Point p : g.points()) {
          p.p = inst.frame.apply(p.p);
          if (p.normal) p.normal = inst.frame.apply_vector(*p.normal);
          box.expand(p.p);
          pts.push_back(p);
          out.elementLabels.push_back(sym.label);
          out.elementInstance.push_back(static_cast<int>(i));
        }
      }
    } else {
      box = inst.frame.apply(BoundingBox::of_corners(Vec3::Zero(), sym.size));
    }
    out.instances[i].bbox = box;
    if (const auto it = byLhs.find(inst.symbol); it != byLhs.end()) {
      for (const Rule* r : it->second) {
        for (const auto& xf : r->expand()) {
          if (out.instances.size() >= kMaxInstances) throw Error("derivation exceeds the instance limit");
          out.instances.push_back({r->produces, grammar.find_symbol(r->produces)->label, inst.frame * xf, {},
                                   static_cast<int>(i), r->id});
        }
      }
    }
  }
  if (!tris.empty()) out.model = Model::mesh(std::move(tris));
  else if (!pts.empty()) out.model = Model::cloud(std::move(pts));
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

double num(double v) { return round_significant(v, 9); }

ojson vec_json(const Vec3& v) { return ojson::array({num(v.x()), num(v.y()), num(v.z())}); }

ojson xf_json(const RigidTransform& t) {
  ojson rot = ojson::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rot.push_back(num(t.rotation(r, c)));
  }
  return ojson{{"rotation", rot}, {"translation", vec_json(t.translation)}};
}

ojson symbol_json(const GrammarSymbol& s, bool withSynthetic) {
  ojson j;
  j["id"] = s.id;
  j["label"] = s.label;
  j["geometryRef"] = s.geometryRef.empty() ? ojson(nullptr) : ojson(s.geometryRef);
  j["bbox"] = ojson{{"min", ojson::array({0.0, 0.0, 0.0})}, {"max", vec_json(s.size)}};
  if (withSynthetic) j["synthetic"] = s.synthetic;
  return j;
}

// Path-aware readers.
const ojson& field(const ojson& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path.empty() ? "/" : path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ValidationError(path + "/" + key, "missing field");
  return *it;
}

double read_num(const ojson& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(path, "must be finite");
  return v;
}

int read_int(const ojson& j, const std::string& path) {
  if (!j.is_number_integer()) throw ValidationError(path, "expected an integer");
  return j.get<int>();
}

std::string read_str(const ojson& j, const std::string& path) {
  if (!j.is_string()) throw ValidationError(path, "expected a string");
  return j.get<std::string>();
}

const ojson& read_array(const ojson& j, const std::string& path, std::size_t size = 0) {
  if (!j.is_array()) throw ValidationError(path, "expected an array");
  if (size && j.size() != size) throw ValidationError(path, "expected " + std::to_string(size) + " entries");
  return j;
}

Vec3 read_vec(const ojson& j, const std::string& path) {
  read_array(j, path, 3);
  return {read_num(j[0], path + "/0"), read_num(j[1], path + "/1"), read_num(j[2], path + "/2")};
}

RigidTransform read_xf(const ojson& j, const std::string& path) {
  RigidTransform t;
  const auto& rot = read_array(field(j, "rotation", path), path + "/rotation", 9);
  for (int k = 0; k < 9; ++k) t.rotation(k / 3, k % 3) = read_num(rot[k], path + "/rotation/" + std::to_string(k));
  t.translation = read_vec(field(j, "translation", path), path + "/translation");
  if (!t.is_valid(1e-6)) throw ValidationError(path + "/rotation", "not a proper rotation");
  return t;
}

GrammarSymbol read_symbol(const ojson& j, const std::string& path, bool terminal) {
  GrammarSymbol s;
  s.terminal = terminal;
  s.id = read_str(field(j, "id", path), path + "/id");
  if (s.id.empty()) throw ValidationError(path + "/id", "must not be empty");
  s.label = read_int(field(j, "label", path), path + "/label");
  const auto& ref = field(j, "geometryRef", path);
  if (!ref.is_null()) s.geometryRef = read_str(ref, path + "/geometryRef");
  const auto& box = field(j, "bbox", path);
  s.size = read_vec(field(box, "max", path + "/bbox"), path + "/bbox/max") -
           read_vec(field(box, "min", path + "/bbox"), path + "/bbox/min");
  if ((s.size.array() < 0.0).any()) throw ValidationError(path + "/bbox", "max below min");
  if (!terminal) {
    const auto& syn = field(j, "synthetic", path);
    if (!syn.is_boolean()) throw ValidationError(path + "/synthetic", "expected a boolean");
    s.synthetic = syn.get<bool>();
  }
  return s;
}

}  // namespace

ojson grammar_to_json(const SplitGrammar& g) {
  ojson j;
  j["version"] = g.version;
  j["axiom"] = g.axiom;
  j["terminals"] = ojson::array();
  for (const auto& s : g.terminals) j["terminals"].push_back(symbol_json(s, false));
  j["nonterminals"] = ojson::array();
  for (const auto& s : g.nonterminals) j["nonterminals"].push_back(symbol_json(s, true));
  j["rules"] = ojson::array();
  for (const auto& r : g.rules) {
    ojson jr;
    jr["id"] = r.id;
    jr["lhs"] = r.lhs;
    jr["produces"] = r.produces;
    jr["origin"] = xf_json(r.origin);
    jr["repetition"] = r.repetition;
    jr["spacing"] = ojson::array({vec_json(r.spacing[0]), vec_json(r.spacing[1]), vec_json(r.spacing[2])});
    jr["gap"] = ojson::array({num(r.gap[0]), num(r.gap[1]), num(r.gap[2])});
    if (r.rotation) {
      jr["rotation"] = ojson{{"axis", vec_json(r.rotation->axis)},
                             {"center", vec_json(r.rotation->center)},
                             {"stepDeg", num(r.rotation->stepDeg)}};
    } else {
      jr["rotation"] = nullptr;
    }
    jr["splitOps"] = ojson::array();
    for (const auto& s : r.splitOps) jr["splitOps"].push_back(xf_json(s));
    jr["residual"] = num(r.residual);
    j["rules"].push_back(std::move(jr));
  }
  ojson meta;
  ojson theta;
  const auto values = g.meta.theta.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) theta[std::string(ParamVector::names()[i])] = num(values[i]);
  meta["theta"] = theta;
  ojson gamma;
  const auto gv = g.meta.gamma.to_array();
  for (int i = 0; i < 4; ++i) gamma[GrammarValues::names()[i]] = num(gv[i]);
  meta["gamma"] = gamma;
  meta["seed"] = g.meta.seed;
  meta["dataType"] = to_string(g.meta.dataType);
  meta["axiomFrame"] = xf_json(g.meta.axiomFrame);
  meta["residual"] = num(g.meta.residual);
  j["meta"] = meta;
  return j;
}

std::string serialize(const SplitGrammar& grammar) { return grammar_to_json(grammar).dump() + "\n"; }

SplitGrammar grammar_from_json(const ojson& j) {
  SplitGrammar g;
  const auto& version = field(j, "version", "");
  g.version = read_int(version, "/version");
  if (g.version != kGrammarVersion) throw ValidationError("/version", "unsupported version " + std::to_string(g.version));
  g.axiom = read_str(field(j, "axiom", ""), "/axiom");
  const auto& terms = read_array(field(j, "terminals", ""), "/terminals");
  for (std::size_t i = 0; i < terms.size(); ++i) {
    g.terminals.push_back(read_symbol(terms[i], "/terminals/" + std::to_string(i), true));
  }
  const auto& nonterms = read_array(field(j, "nonterminals", ""), "/nonterminals");
  for (std::size_t i = 0; i < nonterms.size(); ++i) {
    g.nonterminals.push_back(read_symbol(nonterms[i], "/nonterminals/" + std::to_string(i), false));
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < g.terminals.size(); ++i) {
    if (!ids.insert(g.terminals[i].id).second) {
      throw ValidationError("/terminals/" + std::to_string(i) + "/id", "duplicate symbol id");
    }
  }
  for (std::size_t i = 0; i < g.nonterminals.size(); ++i) {
    if (!ids.insert(g.nonterminals[i].id).second) {
      throw ValidationError("/nonterminals/" + std::to_string(i) + "/id", "duplicate symbol id");
    }
  }
  if (!ids.count(g.axiom)) throw ValidationError("/axiom", "unknown symbol '" + g.axiom + "'");

  const auto& rules = read_array(field(j, "rules", ""), "/rules");
  for (std::size_t i = 0; i < rules.size(); ++i) {
    const std::string p = "/rules/" + std::to_string(i);
    const auto& jr = rules[i];
    Rule r;
    r.id = read_str(field(jr, "id", p), p + "/id");
    r.lhs = read_str(field(jr, "lhs", p), p + "/lhs");
    if (!ids.count(r.lhs)) throw ValidationError(p + "/lhs", "unknown symbol '" + r.lhs + "'");
    r.produces = read_str(field(jr, "produces", p), p + "/produces");
    if (!ids.count(r.produces)) throw ValidationError(p + "/produces", "unknown symbol '" + r.produces + "'");
    r.origin = read_xf(field(jr, "origin", p), p + "/origin");
    const auto& rep = read_array(field(jr, "repetition", p), p + "/repetition", 3);
    for (int k = 0; k < 3; ++k) {
      const std::string q = p + "/repetition/" + std::to_string(k);
      r.repetition[k] = read_int(rep[k], q);
      if (r.repetition[k] < 1) throw ValidationError(q, "must be >= 1");
    }
    const auto& sp = read_array(field(jr, "spacing", p), p + "/spacing", 3);
    for (int k = 0; k < 3; ++k) r.spacing[k] = read_vec(sp[k], p + "/spacing/" + std::to_string(k));
    const auto& gap = read_array(field(jr, "gap", p), p + "/gap", 3);
    for (int k = 0; k < 3; ++k) r.gap[k] = read_num(gap[k], p + "/gap/" + std::to_string(k));
    const auto& rot = field(jr, "rotation", p);
    if (!rot.is_null()) {
      RotationPattern rp;
      rp.axis = read_vec(field(rot, "axis", p + "/rotation"), p + "/rotation/axis");
      if (rp.axis.norm() < 1e-12) throw ValidationError(p + "/rotation/axis", "must be non-zero");
      rp.center = read_vec(field(rot, "center", p + "/rotation"), p + "/rotation/center");
      rp.stepDeg = read_num(field(rot, "stepDeg", p + "/rotation"), p + "/rotation/stepDeg");
      r.rotation = rp;
    }
    const auto& ops = read_array(field(jr, "splitOps", p), p + "/splitOps");
    for (std::size_t k = 0; k < ops.size(); ++k) r.splitOps.push_back(read_xf(ops[k], p + "/splitOps/" + std::to_string(k)));
    r.residual = read_num(field(jr, "residual", p), p + "/residual");
    g.rules.push_back(std::move(r));
  }

  const auto& meta = field(j, "meta", "");
  const auto& theta = field(meta, "theta", "/meta");
  std::array<double, ParamVector::kDims> tv{};
  for (int i = 0; i < ParamVector::kDims; ++i) {
    const std::string name(ParamVector::names()[i]);
    tv[i] = read_num(field(theta, name, "/meta/theta"), "/meta/theta/" + name);
  }
  g.meta.theta = ParamVector::from_array(tv);
  const auto& gamma = field(meta, "gamma", "/meta");
  std::array<double, 4> gv{};
  for (int i = 0; i < 4; ++i) {
    const std::string name = GrammarValues::names()[i];
    gv[i] = read_num(field(gamma, name, "/meta/gamma"), "/meta/gamma/" + name);
  }
  g.meta.gamma = GrammarValues::from_array(gv);
  const auto& seed = field(meta, "seed", "/meta");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    throw ValidationError("/meta/seed", "expected a non-negative integer");
  }
  g.meta.seed = seed.get<std::uint64_t>();
  const std::string dt = read_str(field(meta, "dataType", "/meta"), "/meta/dataType");
  if (dt == "mesh") g.meta.dataType = DataType::Mesh;
  else if (dt == "pointcloud") g.meta.dataType = DataType::PointCloud;
  else throw ValidationError("/meta/dataType", "expected 'mesh' or 'pointcloud'");
  g.meta.axiomFrame = read_xf(field(meta, "axiomFrame", "/meta"), "/meta/axiomFrame");
  g.meta.residual = read_num(field(meta, "residual", "/meta"), "/meta/residual");

  try {
    g.check_well_formed();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError("/rules", e.what());
  }
  return g;
}

SplitGrammar parse_grammar(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("/", std::string("malformed JSON: ") + e.what());
  }
  return grammar_from_json(j);
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::vector<std::filesystem::path> save_grammar(const std::filesystem::path& path, SplitGrammar grammar) {
  const auto dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const std::string stem = path.stem().string();
  std::vector<std::filesystem::path> written;
  for (auto* list : {&grammar.terminals, &grammar.nonterminals}) {
    for (auto& s : *list) {
      if (!s.geometry) {
        s.geometryRef.clear();
        continue;
      }
      s.geometryRef = stem + "." + s.id + (s.geometry->is_mesh() ? ".obj" : ".ply");
      const auto file = dir / s.geometryRef;
      std::ofstream out(file, std::ios::binary);
      if (!out) throw Error("cannot write " + file.string());
      if (s.geometry->is_mesh()) write_obj(out, *s.geometry);
      else write_ply(out, *s.geometry);
      written.push_back(file);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize(grammar);
  if (!out) throw Error("failed writing " + path.string());
  written.push_back(path);
  return written;
}

SplitGrammar load_grammar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  SplitGrammar g = parse_grammar(ss.str());
  for (auto* list : {&g.terminals, &g.nonterminals}) {
    for (auto& s : *list) {
      if (s.geometryRef.empty()) continue;
      const auto file = path.parent_path() / s.geometryRef;
      if (!std::filesystem::exists(file)) throw Error("missing geometry sidecar " + file.string());
      s.geometry = std::make_shared<const Model>(load_model(file));
    }
  }
  return g;
}

bool structurally_equal(const SplitGrammar& a, const SplitGrammar& b) {
  ojson ja = grammar_to_json(a), jb = grammar_to_json(b);
  for (auto* j : {&ja, &jb}) {
    for (auto& s : (*j)["terminals"]) s.erase("geometryRef");
    for (auto& s : (*j)["nonterminals"]) s.erase("geometryRef");
  }
  return ja == jb;
}

}  // namespace gproc
