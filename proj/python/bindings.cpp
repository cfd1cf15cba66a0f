#include "gproc/completion.hpp"
#include "gproc/fixtures.hpp"
#include "gproc/grammar.hpp"
#include "gproc/guidance.hpp"
#include "gproc/model_io.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace pybind11::literals;
using namespace gproc;
using ojson = nlohmann::ordered_json;

namespace {

py::object to_py(const ojson& j) { return py::module_::import("json").attr("loads")(j.dump()); }

ojson from_py(const py::handle& obj) {
  return ojson::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::dict gamma_dict(const GrammarValues& g) { return py::dict("alp"_a = g.alp, "non"_a = g.non, "fan"_a = g.fan, "rep"_a = g.rep); }

py::dict theta_dict(const ParamVector& p) {
  py::dict d;
  const auto a = p.to_array();
  for (int i = 0; i < ParamVector::kDims; ++i) d[py::str(std::string(ParamVector::names()[i]))] = a[i];
  return d;
}

ParamVector theta_from(const py::object& theta, ParamVector base) {
  if (theta.is_none()) return base;
  auto a = base.to_array();
  for (const auto& [k, v] : theta.cast<py::dict>()) {
    const auto name = k.cast<std::string>();
    const int i = ParamVector::index_of(name);
    if (i < 0) throw ValidationError("/theta/" + name, "unknown parameter");
    a[i] = v.cast<double>();
  }
  return ParamVector::from_array(a);
}

TargetSpec target_from(const py::object& target) {
  if (py::isinstance<py::str>(target)) return TargetSpec::parse(target.cast<std::string>());
  return TargetSpec::from_json(from_py(target));
}

Model fixture_by_name(const std::string& name) {
  for (auto& f : fixture_corpus()) {
    if (f.name == name) return std::move(f.model);
  }
  if (name == "ablation_cloud") return ablation_cloud().cloud;
  throw ValidationError("/name", "unknown fixture '" + name + "'");
}

py::array_t<double> geometry_array(const Model& m) {
  if (m.is_mesh()) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.size()), py::ssize_t(3), py::ssize_t(3)});
    auto a = out.mutable_unchecked<3>();
    for (std::size_t t = 0; t < m.size(); ++t)
      for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 3; ++c) a(t, k, c) = m.triangles()[t].v[k][c];
    return out;
  }
  py::array_t<double> out({static_cast<py::ssize_t>(m.size()), py::ssize_t(3)});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.size(); ++i)
    for (int c = 0; c < 3; ++c) a(i, c) = m.points()[i].p[c];
  return out;
}

std::map<std::string, RuleOverride> overrides_from(const SplitGrammar& g, const py::dict& d) {
  std::map<std::string, RuleOverride> out;
  for (const auto& [k, v] : d) {
    RuleOverride o;
    const auto spec = v.cast<py::dict>();
    if (spec.contains("rep")) {
      auto rep = spec["rep"].cast<std::vector<int>>();
      if (rep.empty() || rep.size() > 3) throw ValidationError("/overrides/rep", "expected 1 to 3 counts");
      rep.resize(3, 1);
      o.repetition = std::array<int, 3>{rep[0], rep[1], rep[2]};
    }
    if (spec.contains("spacing")) {
      const auto rows = spec["spacing"].cast<std::vector<std::array<double, 3>>>();
      if (rows.empty() || rows.size() > 3) throw ValidationError("/overrides/spacing", "expected 1 to 3 vectors");
      std::array<Vec3, 3> s{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
      const Rule* rule = g.find_rule(k.cast<std::string>());
      for (std::size_t i = 0; i < 3; ++i) {
        if (i < rows.size()) {
          s[i] = Vec3(rows[i][0], rows[i][1], rows[i][2]);
        } else if (rule) {
          s[i] = rule->spacing[i];
        }
      }
      o.spacing = s;
    }
    out[k.cast<std::string>()] = o;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Inverse procedural modeling core";

  auto base = py::register_exception<Error>(m, "GprocError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<OutOfBoundsError>(m, "OutOfBoundsError", base.ptr());

  py::class_<Model>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); }, "path"_a)
      .def_static("fixture", &fixture_by_name, "name"_a)
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_model(p, self); }, "path"_a)
      .def_property_readonly("is_mesh", &Model::is_mesh)
      .def_property_readonly("diagonal", &Model::diagonal)
      .def_property_readonly("bbox", [](const Model& self) {
        const auto& b = self.bbox();
        return py::make_tuple(py::make_tuple(b.min.x(), b.min.y(), b.min.z()), py::make_tuple(b.max.x(), b.max.y(), b.max.z()));
      })
      .def("geometry", &geometry_array, "Triangles as (n, 3, 3) or points as (n, 3)")
      .def("__len__", &Model::size)
      .def("__repr__", [](const Model& self) {
        return "<Model " + std::string(self.is_mesh() ? "mesh" : "pointcloud") + " with " + std::to_string(self.size()) +
               " elements>";
      });

  m.def("fixture_names", [] {
    std::vector<std::string> names;
    for (const auto& f : fixture_corpus()) names.push_back(f.name);
    names.push_back("ablation_cloud");
    return names;
  });
  m.def("parameter_names", [] {
    std::vector<std::string> out;
    for (const auto& n : ParamVector::names()) out.emplace_back(n);
    return out;
  });
  m.def("default_params", [](const Model& model) { return theta_dict(default_params(model)); }, "model"_a);
  m.def(
      "default_bounds",
      [](const Model& model) {
        const ParamBounds b = default_bounds(model);
        py::dict d;
        for (int i = 0; i < ParamVector::kDims; ++i)
          d[py::str(std::string(ParamVector::names()[i]))] = py::make_tuple(b.lo[i], b.hi[i]);
        return d;
      },
      "model"_a);

  py::class_<SplitGrammar>(m, "Grammar")
      .def_static("parse", &parse_grammar, "text"_a)
      .def_static("load", &load_grammar, "path"_a)
      .def(
          "save", [](const SplitGrammar& g, const std::filesystem::path& p) { return save_grammar(p, g); }, "path"_a, "Writes the grammar and its geometry sidecars; returns the written paths")
      .def("to_json", [](const SplitGrammar& g) { return serialize(g); })
      .def("values", [](const SplitGrammar& g) { return gamma_dict(evaluate(g)); })
      .def("signature", &rule_signature)
      .def(
          "derive",
          [](const SplitGrammar& g, const py::dict& overrides) {
            Derivation d = derive(g, overrides_from(g, overrides));
            if (!d.model) throw Error("the grammar derives no geometry");
            return std::move(*d.model);
          },
          "overrides"_a = py::dict(), "Overrides map a rule or symbol id to {'rep': [a, b, c], 'spacing': [[x, y, z], ...]}; spacing axes not given keep the rule's own")
      .def_property_readonly("axiom", [](const SplitGrammar& g) { return g.axiom; })
      .def_property_readonly("rules", [](const SplitGrammar& g) { return to_py(grammar_to_json(g)["rules"]); })
      .def("__eq__", &structurally_equal);

  m.def(
      "proceduralize",
      [](const Model& model, const py::object& theta, std::uint64_t seed) {
        const ParamVector p = theta_from(theta, default_params(model));
        py::gil_scoped_release release;
        return proceduralize(model, p, seed).grammar;
      },
      "model"_a, "theta"_a = py::none(), "seed"_a = 0);

  m.def(
      "approximate",
      [](const Model& model, const py::object& theta, std::uint64_t seed) {
        Approximator f(model, default_bounds(model), seed);
        const ParamVector p = theta_from(theta, default_params(model));
        return gamma_dict(f(p));
      },
      "model"_a, "theta"_a = py::none(), "seed"_a = 0, "Grammar values estimated by the fast approximator");

  m.def(
      "optimize",
      [](const Model& model, const py::object& target, int budget, std::uint64_t seed, const py::object& theta,
         std::optional<double> epsilon) {
        TargetSpec t = target_from(target);
        if (epsilon) t.epsilon = *epsilon;
        GuidanceState state = GuidanceState::for_model(model, seed);
        state.budget = budget;
        if (!theta.is_none()) {
          state.theta = theta_from(theta, state.theta);
          state.warmStart = true;
        }
        GuidanceState out;
        {
          py::gil_scoped_release release;
          out = optimize(model, t, state);
        }
        py::list trace;
        for (const auto& r : out.trace) {
          trace.append(py::dict("iteration"_a = r.iteration, "evaluation"_a = r.evaluation, "theta"_a = theta_dict(r.theta),
                                "gamma"_a = gamma_dict(r.gamma), "phi"_a = r.phi, "accepted"_a = r.accepted));
        }
        return py::dict("status"_a = out.status(), "converged"_a = out.converged, "phi"_a = out.phi,
                        "gamma"_a = gamma_dict(out.gamma), "theta"_a = theta_dict(out.theta),
                        "evaluations"_a = out.evaluations, "trace"_a = trace, "grammar"_a = *out.grammar);
      },
      "model"_a, "target"_a, "budget"_a = 200, "seed"_a = 0, "theta"_a = py::none(), "epsilon"_a = py::none(),
      "Target is 'alp=1,non=2' or a dict such as {'alp': 1, 'non': 2}");

  m.def(
      "suggest",
      [](const Model& model, int samples, std::uint64_t seed, int budgetPerSample) {
        SuggestOptions options;
        options.budgetPerSample = budgetPerSample;
        std::vector<Candidate> family;
        {
          py::gil_scoped_release release;
          family = suggest_family(model, samples, seed, options);
        }
        py::list out;
        for (auto& c : family) {
          out.append(py::dict("target"_a = to_py(c.target.to_json()), "gamma"_a = gamma_dict(c.gamma), "phi"_a = c.phi,
                              "converged"_a = c.converged, "theta"_a = theta_dict(c.theta), "grammar"_a = c.grammar));
        }
        return out;
      },
      "model"_a, "samples"_a = 8, "seed"_a = 0, "budget_per_sample"_a = 80);

  m.def(
      "complete",
      [](const Model& cloud, const py::object& theta, std::uint64_t seed) {
        const ParamVector p = theta_from(theta, default_params(cloud));
        std::optional<CompletionResult> r;
        {
          py::gil_scoped_release release;
          r.emplace(complete_cloud(cloud, p, seed));
        }
        return py::make_tuple(std::move(r->completed), to_py(r->report.to_json()));
      },
      "cloud"_a, "theta"_a = py::none(), "seed"_a = 0, "Returns the completed cloud and the completion report");
}
