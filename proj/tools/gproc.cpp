#include "gproc/completion.hpp"
#include "gproc/grammar.hpp"
#include "gproc/guidance.hpp"
#include "gproc/model_io.hpp"
#include "gproc/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace gproc;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

/// Bad option values; reported like CLI11 parse errors.
struct UsageError : Error {
  using Error::Error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string part; std::getline(in, part, sep);) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

double to_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError(what + ": '" + text + "' is not a number");
  return v;
}

/// "geo=0.8,num=12" applied on top of `base`.
ParamVector parse_theta(const std::string& text, ParamVector base) {
  auto a = base.to_array();
  for (const auto& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--theta: expected name=value, got '" + item + "'");
    const std::string name = item.substr(0, eq);
    const int i = ParamVector::index_of(name);
    if (i < 0) throw UsageError("--theta: unknown parameter '" + name + "'");
    a[i] = to_number(item.substr(eq + 1), "--theta " + name);
  }
  return ParamVector::from_array(a);
}

/// "<ref>.rep=4x5[x1]" or "<ref>.spacing=x,y,z[;x,y,z[;x,y,z]]"; ref is a rule or symbol id.
/// `spacingGiven` records how many spacing vectors were given per ref.
void parse_override(const std::string& text, std::map<std::string, RuleOverride>& out,
                    std::map<std::string, int>& spacingGiven) {
  const auto eq = text.find('=');
  const auto dot = text.rfind('.', eq);
  if (eq == std::string::npos || dot == std::string::npos || dot == 0) {
    throw UsageError("--override: expected <rule>.rep=AxB[xC] or <rule>.spacing=x,y,z;..., got '" + text + "'");
  }
  const std::string ref = text.substr(0, dot);
  const std::string field = text.substr(dot + 1, eq - dot - 1);
  const std::string value = text.substr(eq + 1);
  RuleOverride& o = out[ref];
  if (field == "rep") {
    const auto parts = split(value, 'x');
    if (parts.empty() || parts.size() > 3) throw UsageError("--override " + ref + ".rep: expected AxB[xC]");
    std::array<int, 3> rep{1, 1, 1};
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const double v = to_number(parts[i], "--override " + ref + ".rep");
      if (v < 1 || v != std::floor(v)) throw UsageError("--override " + ref + ".rep: counts must be positive integers");
      rep[i] = static_cast<int>(v);
    }
    o.repetition = rep;
  } else if (field == "spacing") {
    const auto vecs = split(value, ';');
    if (vecs.empty() || vecs.size() > 3) throw UsageError("--override " + ref + ".spacing: expected 1 to 3 vectors");
    std::array<Vec3, 3> spacing{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    for (std::size_t i = 0; i < vecs.size(); ++i) {
      const auto c = split(vecs[i], ',');
      if (c.size() != 3) throw UsageError("--override " + ref + ".spacing: vectors need 3 components");
      for (int k = 0; k < 3; ++k) spacing[i][k] = to_number(c[k], "--override " + ref + ".spacing");
    }
    o.spacing = spacing;
    spacingGiven[ref] = static_cast<int>(vecs.size());
  } else {
    throw UsageError("--override: unknown field '" + field + "' (use rep or spacing)");
  }
}

ojson gamma_json(const GrammarValues& g) { return {{"alp", g.alp}, {"non", g.non}, {"fan", g.fan}, {"rep", g.rep}}; }

std::string gamma_text(const GrammarValues& g) {
  std::ostringstream s;
  s << "alp=" << g.alp << " non=" << g.non << " fan=" << g.fan << " rep=" << g.rep;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

ElementLabels labels_of(const Derivation& d) { return ElementLabels{d.elementLabels, ""}; }

// ---------------------------------------------------------------------------

struct ProceduralizeArgs {
  std::string input, output = "grammar.json", target, config, theta, trace;
  int budget = 0;
  double epsilon = 0.0;
  bool json = false;
};

int run_proceduralize(const ProceduralizeArgs& a, std::uint64_t seed, bool seedSet) {
  GuidanceConfig cfg;
  if (!a.config.empty()) cfg = GuidanceConfig::load(a.config);
  if (!a.target.empty()) {
    try {
      cfg.target = TargetSpec::parse(a.target);
    } catch (const ValidationError& e) {
      throw UsageError(std::string("--target: ") + e.what());
    }
  }
  if (a.budget > 0) cfg.budget = a.budget;
  if (a.epsilon > 0) cfg.target.epsilon = a.epsilon;
  if (seedSet) cfg.seed = seed;

  const Model model = load_model(a.input);
  GuidanceState state = cfg.make_state(model);
  if (!a.theta.empty()) {
    state.theta = parse_theta(a.theta, state.theta);
    state.warmStart = true;
  }
  if (!state.bounds.contains(state.theta)) throw UsageError("start parameters lie outside the parameter bounds");

  ojson report;
  if (!cfg.target.has_any()) {
    PipelineResult r = proceduralize(model, state.theta, cfg.seed);
    const auto written = save_grammar(a.output, r.grammar);
    const GrammarValues g = evaluate(r.grammar);
    report = {{"status", "single-pass"}, {"gamma", gamma_json(g)}, {"grammar", a.output}, {"files", written.size()}};
    if (!a.json) std::cout << "single pass: " << gamma_text(g) << "\nwrote " << a.output << "\n";
  } else {
    cfg.target.validate();
    const GuidanceState out = optimize(model, cfg.target, state);
    save_grammar(a.output, *out.grammar);
    if (!a.trace.empty()) {
      std::ofstream csv(a.trace);
      if (!csv) throw Error("cannot write " + a.trace);
      write_trace_csv(csv, out);
    }
    report = {{"status", out.status()},
              {"gamma", gamma_json(out.gamma)},
              {"phi", out.phi},
              {"evaluations", out.evaluations},
              {"grammar", a.output}};
    if (!a.json) {
      std::cout << out.status() << " after " << out.evaluations << " evaluations: " << gamma_text(out.gamma)
                << " phi=" << out.phi << "\nwrote " << a.output << "\n";
    }
  }
  if (a.json) std::cout << report.dump(2) << "\n";
  return 0;
}

int run_evaluate(const std::string& path, bool json) {
  const SplitGrammar g = parse_grammar([&] {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }());
  const GrammarValues v = evaluate(g);
  if (json) {
    std::cout << gamma_json(v).dump(2) << "\n";
  } else {
    std::cout << gamma_text(v) << "\n";
  }
  return 0;
}

int run_derive(const std::string& grammarPath, const std::vector<std::string>& overrideArgs, const std::string& output,
               bool colour) {
  std::map<std::string, RuleOverride> overrides;
  std::map<std::string, int> spacingGiven;
  for (const auto& o : overrideArgs) parse_override(o, overrides, spacingGiven);
  const SplitGrammar g = load_grammar(grammarPath);
  // Spacing axes that were not given keep the rule's own spacing.
  for (const auto& [ref, given] : spacingGiven) {
    if (const Rule* r = g.find_rule(ref)) {
      for (int i = given; i < 3; ++i) (*overrides[ref].spacing)[i] = r->spacing[i];
    }
  }
  const Derivation d = derive(g, overrides);
  if (!d.model) throw Error("the grammar derives no geometry");
  const ElementLabels labels = labels_of(d);
  save_model(output, *d.model, colour ? &labels : nullptr);
  std::cout << "derived " << d.instances.size() << " instances, " << d.model->size() << " elements\nwrote " << output
            << "\n";
  return 0;
}

int run_suggest(const std::string& input, int samples, int budget, const std::string& outDir, std::uint64_t seed) {
  const Model model = load_model(input);
  SuggestOptions options;
  if (budget > 0) options.budgetPerSample = budget;
  const auto family = suggest_family(model, samples, seed, options);
  fs::create_directories(outDir);
  ojson index = ojson::array();
  for (std::size_t i = 0; i < family.size(); ++i) {
    const auto& c = family[i];
    const std::string stem = "candidate_" + std::to_string(i);
    save_grammar(fs::path(outDir) / (stem + ".json"), c.grammar);
    if (c.preview.model) {
      const ElementLabels labels = labels_of(c.preview);
      save_model(fs::path(outDir) / (stem + (c.preview.model->is_mesh() ? ".preview.obj" : ".preview.ply")),
                 *c.preview.model, &labels);
    }
    index.push_back({{"grammar", stem + ".json"},
                     {"target", c.target.to_json()},
                     {"gamma", gamma_json(c.gamma)},
                     {"phi", c.phi},
                     {"converged", c.converged},
                     {"signature", rule_signature(c.grammar)}});
    std::cout << stem << ": " << gamma_text(c.gamma) << (c.converged ? "" : " (not converged)") << "\n";
  }
  write_text(fs::path(outDir) / "suggestions.json", index.dump(2) + "\n");
  std::cout << family.size() << " distinct grammars in " << outDir << "\n";
  return 0;
}

int run_complete(const std::string& input, const std::string& output, const std::string& theta,
                 const std::string& stats, std::uint64_t seed) {
  const Model cloud = load_model(input);
  if (cloud.is_mesh()) throw UsageError("complete expects a point cloud (.ply or .xyz)");
  const ParamVector p = theta.empty() ? default_params(cloud) : parse_theta(theta, default_params(cloud));
  const CompletionResult r = complete_cloud(cloud, p, seed);
  save_model(output, r.completed);
  std::cout << r.report.to_text();
  if (!stats.empty()) write_text(stats, r.report.to_json().dump(2) + "\n");
  std::cout << "wrote " << output << "\n";
  return 0;
}

int run_serve(const std::string& host, int port, const std::string& dataDir, int workers, std::size_t maxUpload) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(ServiceOptions{dataDir, workers, maxUpload});
  HttpServer http(service, maxUpload);
  const int bound = http.bind(host, port);
  http.start();
  std::cout << "listening on http://" << host << ":" << bound << " (data in " << dataDir << ")" << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  std::cout << "shutting down" << std::endl;
  http.stop();
  service.shutdown();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse procedural modeling: grammars from meshes and point clouds"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  auto* seedOpt = app.add_option("--seed", seed, "Random seed")->capture_default_str();

  ProceduralizeArgs pa;
  auto* proc = app.add_subcommand("proceduralize", "Extract a grammar, optionally guided toward target values");
  proc->add_option("-i,--input", pa.input, "Input model (.obj, .ply, .xyz)")->required()->check(CLI::ExistingFile);
  proc->add_option("-o,--output", pa.output, "Output grammar JSON")->capture_default_str();
  proc->add_option("--target", pa.target, "Target values, e.g. alp=1,non=2 or rep=20..40");
  proc->add_option("--config", pa.config, "Guidance configuration JSON")->check(CLI::ExistingFile);
  proc->add_option("--theta", pa.theta, "Start parameters, e.g. den=0.15,sym=0.5");
  proc->add_option("--budget", pa.budget, "Evaluation budget")->check(CLI::PositiveNumber);
  proc->add_option("--epsilon", pa.epsilon, "Convergence threshold on the target error")->check(CLI::PositiveNumber);
  proc->add_option("--trace", pa.trace, "Write the optimization trace as CSV");
  proc->add_flag("--json", pa.json, "Print a JSON summary");

  std::string evalPath;
  bool evalJson = false;
  auto* eval = app.add_subcommand("evaluate", "Print the grammar values of a grammar file");
  eval->add_option("grammar", evalPath, "Grammar JSON")->required()->check(CLI::ExistingFile);
  eval->add_flag("--json", evalJson, "Print JSON");

  std::string derivePath, deriveOut = "derived.obj";
  std::vector<std::string> overrides;
  bool colour = false;
  auto* der = app.add_subcommand("derive", "Derive geometry from a grammar, with optional rule edits");
  der->add_option("grammar", derivePath, "Grammar JSON")->required()->check(CLI::ExistingFile);
  der->add_option("--override", overrides, "<rule>.rep=AxB[xC] or <rule>.spacing=x,y,z;...");
  der->add_option("-o,--output", deriveOut, "Output model")->capture_default_str();
  der->add_flag("--labels", colour, "Colour elements by label");

  std::string sugIn, sugOut = "suggestions";
  int samples = 8, sugBudget = 0;
  auto* sug = app.add_subcommand("suggest", "Sample a family of distinct grammars for a model");
  sug->add_option("-i,--input", sugIn, "Input model")->required()->check(CLI::ExistingFile);
  sug->add_option("--samples", samples, "Number of sampled targets")->capture_default_str()->check(CLI::Range(1, 64));
  sug->add_option("--budget", sugBudget, "Evaluations per sample")->check(CLI::PositiveNumber);
  sug->add_option("-o,--output", sugOut, "Output directory")->capture_default_str();

  std::string compIn, compOut, compTheta, compStats;
  auto* comp = app.add_subcommand("complete", "Fill holes in repeated parts of a point cloud");
  comp->add_option("-i,--input", compIn, "Input point cloud (.ply, .xyz)")->required()->check(CLI::ExistingFile);
  comp->add_option("-o,--output", compOut, "Output point cloud")->required();
  comp->add_option("--theta", compTheta, "Parameters, e.g. den=20");
  comp->add_option("--stats", compStats, "Write the completion report as JSON");

  std::string host = "127.0.0.1", dataDir = "gproc-data";
  int port = 8080, workers = 0;
  std::size_t maxUpload = 256ull * 1024 * 1024;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str()->check(CLI::Range(0, 65535));
  serve->add_option("--data-dir", dataDir)->capture_default_str();
  serve->add_option("--workers", workers, "Optimization workers (0 = one per CPU)")->capture_default_str();
  serve->add_option("--max-upload", maxUpload, "Upload limit in bytes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*proc) return run_proceduralize(pa, seed, seedOpt->count() > 0);
    if (*eval) return run_evaluate(evalPath, evalJson);
    if (*der) return run_derive(derivePath, overrides, deriveOut, colour);
    if (*sug) return run_suggest(sugIn, samples, sugBudget, sugOut, seed);
    if (*comp) return run_complete(compIn, compOut, compTheta, compStats, seed);
    if (*serve) return run_serve(host, port, dataDir, workers, maxUpload);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
