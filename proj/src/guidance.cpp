#include "gproc/guidance.hpp"

#include "gproc/pattern.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace gproc {

using ojson = nlohmann::ordered_json;

namespace {

int value_index(const std::string& name) {
  const auto& names = GrammarValues::names();
  for (int i = 0; i < 4; ++i) {
    if (name == names[i]) return i;
  }
  static const std::array<const char*, 4> longNames{"gammaAlp", "gammaNon", "gammaFan", "gammaRep"};
  for (int i = 0; i < 4; ++i) {
    if (name == longNames[i]) return i;
  }
  return -1;
}

double read_number(const ojson& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ValidationError(path, "must be finite");
  return v;
}

std::array<double, 2> read_pair(const ojson& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw ValidationError(path, "expected [min, max]");
  return {read_number(j[0], path + "/0"), read_number(j[1], path + "/1")};
}

template <typename Fn>
void for_each_value(const ojson& j, const std::string& path, Fn&& fn) {
  if (!j.is_object()) throw ValidationError(path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    const int i = value_index(k);
    if (i < 0) throw ValidationError(path + "/" + k, "unknown grammar value");
    fn(i, v, path + "/" + k);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Targets and error
// ---------------------------------------------------------------------------

bool TargetSpec::has_any() const {
  for (int i = 0; i < 4; ++i) {
    if (values[i] || ranges[i]) return true;
  }
  return false;
}

void TargetSpec::validate() const {
  const auto& names = GrammarValues::names();
  if (!has_any()) throw ValidationError("/target", "at least one target value is required");
  for (int i = 0; i < 4; ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ValidationError(std::string("/weights/") + names[i], "must be a finite value >= 0");
    }
    if (values[i] && (!std::isfinite(*values[i]) || *values[i] < 0.0)) {
      throw ValidationError(std::string("/target/") + names[i], "must be a finite value >= 0");
    }
    if (ranges[i] && !((*ranges[i])[0] <= (*ranges[i])[1])) {
      throw ValidationError(std::string("/ranges/") + names[i], "min exceeds max");
    }
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ValidationError("/epsilon", "must be > 0");
}

TargetSpec TargetSpec::parse(const std::string& assignments) {
  TargetSpec t;
  std::stringstream ss(assignments);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("/target", "expected name=value in '" + item + "'");
    const std::string name = item.substr(0, eq), value = item.substr(eq + 1);
    const int i = value_index(name);
    if (i < 0) throw ValidationError("/target/" + name, "unknown grammar value");
    try {
      const auto dots = value.find("..");
      std::size_t used = 0;
      if (dots != std::string::npos) {
        const double lo = std::stod(value.substr(0, dots));
        const double hi = std::stod(value.substr(dots + 2), &used);
        if (used != value.size() - dots - 2) throw std::invalid_argument(value);
        t.ranges[i] = std::array<double, 2>{lo, hi};
      } else {
        t.values[i] = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      }
    } catch (const std::logic_error&) {
      throw ValidationError("/target/" + name, "not a number: '" + value + "'");
    }
  }
  t.validate();
  return t;
}

ojson TargetSpec::to_json() const {
  const auto& names = GrammarValues::names();
  ojson j;
  ojson v = ojson::object(), w = ojson::object(), r = ojson::object();
  for (int i = 0; i < 4; ++i) {
    if (values[i]) v[names[i]] = *values[i];
    w[names[i]] = weights[i];
    if (ranges[i]) r[names[i]] = {(*ranges[i])[0], (*ranges[i])[1]};
  }
  j["values"] = v;
  j["weights"] = w;
  j["ranges"] = r;
  j["epsilon"] = epsilon;
  return j;
}

TargetSpec TargetSpec::from_json(const ojson& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path.empty() ? "/" : path, "expected an object");
  TargetSpec t;
  const bool structured = j.contains("values") || j.contains("targets") || j.contains("weights") ||
                          j.contains("ranges") || j.contains("epsilon");
  if (!structured) {
    for_each_value(j, path, [&](int i, const ojson& v, const std::string& p) { t.values[i] = read_number(v, p); });
  } else {
    for (const char* key : {"values", "targets"}) {
      if (j.contains(key)) {
        for_each_value(j[key], path + "/" + key,
                       [&](int i, const ojson& v, const std::string& p) { t.values[i] = read_number(v, p); });
      }
    }
    if (j.contains("weights")) {
      for_each_value(j["weights"], path + "/weights",
                     [&](int i, const ojson& v, const std::string& p) { t.weights[i] = read_number(v, p); });
    }
    if (j.contains("ranges")) {
      for_each_value(j["ranges"], path + "/ranges",
                     [&](int i, const ojson& v, const std::string& p) { t.ranges[i] = read_pair(v, p); });
    }
    if (j.contains("epsilon")) t.epsilon = read_number(j["epsilon"], path + "/epsilon");
  }
  t.validate();
  return t;
}

double error(const GrammarValues& actual, const TargetSpec& target) {
  const auto a = actual.to_array();
  double phi = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (target.values[i]) {
      phi += target.weights[i] * std::abs(a[i] - *target.values[i]) / std::max(*target.values[i], 1.0);
    } else if (target.ranges[i]) {
      const auto [lo, hi] = *target.ranges[i];
      const double d = a[i] < lo ? lo - a[i] : a[i] > hi ? a[i] - hi : 0.0;
      phi += target.weights[i] * d / std::max(lo, 1.0);
    }
  }
  return phi;
}

bool values_close(const GrammarValues& a, const GrammarValues& b, double eps) {
  const auto x = a.to_array(), y = b.to_array();
  for (int i = 0; i < 4; ++i) {
    if (std::abs(x[i] - y[i]) / std::max(std::abs(y[i]), 1.0) >= eps) return false;
  }
  return true;
}

ShapeParams quantize(const ShapeParams& p) {
  const auto q3 = [](double v) { return std::round(v * 1000.0) / 1000.0; };
  return {q3(p.geo), q3(p.top), q3(p.den), q3(p.dir), std::max(1.0, std::round(p.num))};
}

// ---------------------------------------------------------------------------
// Pipeline and approximator
// ---------------------------------------------------------------------------

PipelineResult proceduralize(const Model& model, const ParamVector& theta, std::uint64_t seed, Segmenter* segmenter) {
  PipelineResult r;
  std::unique_ptr<Segmenter> own;
  if (!segmenter) {
    own = Segmenter::create(model, seed);
    segmenter = own.get();
  }
  r.components = segmenter->segment(quantize(theta.shape));
  r.tree = build_tree(r.components, model.bbox());
  r.representatives = canonicalize_join(r.tree, refine_labels(r.tree, theta.tree));
  auto rules = extract_patterns(r.tree, r.representatives, theta.pattern);
  r.grammar = export_grammar(r.tree, r.representatives, std::move(rules), model, r.components);
  r.grammar.meta.theta = theta;
  r.grammar.meta.seed = seed;
  return r;
}

Approximator::Approximator(const Model& model, ParamBounds bounds, std::uint64_t seed)
    : model_(model), bounds_(bounds), seed_(seed), segmenter_(Segmenter::create(model, seed)) {}

GrammarValues Approximator::operator()(const ParamVector& theta) {
  if (!bounds_.contains(theta, 0.0)) {
    std::ostringstream msg;
    msg << "f evaluated outside the parameter bounds:";
    const auto a = theta.to_array();
    for (int i = 0; i < ParamVector::kDims; ++i) {
      if (a[i] < bounds_.lo[i] || a[i] > bounds_.hi[i]) {
        msg << " " << ParamVector::names()[i] << "=" << a[i] << " not in [" << bounds_.lo[i] << ", " << bounds_.hi[i] << "]";
      }
    }
    throw OutOfBoundsError(msg.str());
  }
  ++evaluations_;
  const ShapeParams q = quantize(theta.shape);
  const std::array<double, 5> key{q.geo, q.top, q.den, q.dir, q.num};
  auto it = segmentations_.find(key);
  if (it == segmentations_.end()) {
    it = segmentations_.emplace(key, std::make_shared<const ComponentSet>(segmenter_->segment(q))).first;
  }
  InstanceTree tree = build_tree(*it->second, model_.bbox());
  const auto reps = canonicalize_join(tree, refine_labels(tree, theta.tree));
  return estimate_values(tree, reps);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

GuidanceState GuidanceState::for_model(const Model& model, std::uint64_t seed) {
  GuidanceState s;
  s.bounds = default_bounds(model);
  s.theta = default_params(model);
  s.seed = seed;
  return s;
}

const char* GuidanceState::status() const {
  if (converged) return "converged";
  if (cancelled) return "cancelled";
  return "budget-exhausted";
}

namespace {

constexpr int D = ParamVector::kDims;
using Unit = std::array<double, D>;

class UnitBox {
 public:
  explicit UnitBox(const ParamBounds& b) : b_(b) {}

  bool active(int i) const { return b_.hi[i] > b_.lo[i]; }
  bool log_scale(int i) const { return b_.logScale[i] && b_.lo[i] > 0.0; }

  Unit to_unit(const ParamVector& p) const {
    const auto a = b_.clamp(p).to_array();
    Unit u{};
    for (int i = 0; i < D; ++i) {
      if (!active(i)) continue;
      u[i] = log_scale(i) ? std::log(a[i] / b_.lo[i]) / std::log(b_.hi[i] / b_.lo[i])
                          : (a[i] - b_.lo[i]) / (b_.hi[i] - b_.lo[i]);
      u[i] = std::clamp(u[i], 0.0, 1.0);
    }
    return u;
  }

  ParamVector from_unit(const Unit& u) const {
    std::array<double, D> a{};
    for (int i = 0; i < D; ++i) {
      if (!active(i)) {
        a[i] = b_.lo[i];
        continue;
      }
      const double t = std::clamp(u[i], 0.0, 1.0);
      a[i] = log_scale(i) ? b_.lo[i] * std::exp(t * std::log(b_.hi[i] / b_.lo[i])) : b_.lo[i] + t * (b_.hi[i] - b_.lo[i]);
      a[i] = std::clamp(a[i], b_.lo[i], b_.hi[i]);
    }
    return ParamVector::from_array(a);
  }

 private:
  const ParamBounds& b_;
};

struct Stop {};

}  // namespace

GuidanceState optimize(const Model& model, const TargetSpec& target, GuidanceState state, Approximator* shared) {
  target.validate();
  if (state.budget <= 0) throw ValidationError("/budget", "must be > 0");
  for (int i = 0; i < D; ++i) {
    if (!(state.bounds.lo[i] <= state.bounds.hi[i])) {
      throw ValidationError("/bounds/" + std::string(ParamVector::names()[i]), "min exceeds max");
    }
  }
  std::unique_ptr<Approximator> own;
  if (!shared) {
    own = std::make_unique<Approximator>(model, state.bounds, state.seed);
    shared = own.get();
  }
  Approximator& f = *shared;
  const UnitBox box(state.bounds);
  const double eps = target.epsilon;
  std::mt19937_64 rng(state.seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  state.trace.clear();
  state.evaluations = 0;
  state.converged = state.cancelled = false;
  std::map<Unit, std::tuple<int, GrammarValues, double>> seen;  // trace row, values, phi
  int iteration = 0;
  const auto key_of = [](const Unit& u) {
    Unit key;
    for (int i = 0; i < D; ++i) key[i] = std::round(u[i] * 1e9) / 1e9;
    return key;
  };

  // Evaluates phi at u; throws Stop when the budget is spent or the run is cancelled.
  const auto eval = [&](const Unit& u) -> double {
    const Unit key = key_of(u);
    if (const auto it = seen.find(key); it != seen.end()) return std::get<2>(it->second);
    if (state.evaluations >= state.budget) throw Stop{};
    if (state.cancel && state.cancel()) {
      state.cancelled = true;
      throw Stop{};
    }
    const ParamVector theta = box.from_unit(u);
    TraceRow row;
    row.iteration = iteration;
    row.evaluation = ++state.evaluations;
    row.theta = theta;
    try {
      row.gamma = f(theta);
      row.phi = error(row.gamma, target);
    } catch (const EmptySegmentationError&) {
      row.phi = std::numeric_limits<double>::infinity();
    }
    seen.emplace(key, std::make_tuple(static_cast<int>(state.trace.size()), row.gamma, row.phi));
    state.trace.push_back(row);
    if (state.onEvaluate) state.onEvaluate(row);
    return row.phi;
  };
  const auto accept = [&](const Unit& u) {
    const auto& [row, g, phi] = seen.at(key_of(u));
    if (row >= 0) state.trace[row].accepted = true;
    state.theta = box.from_unit(u);
    state.gamma = g;
    state.phi = phi;
  };

  std::vector<int> active;
  for (int i = 0; i < D; ++i) {
    if (box.active(i)) active.push_back(i);
  }
  Unit x = box.to_unit(state.theta);
  const double dmin = 1e-3, dmax = 1.0;
  double delta = state.warmStart ? 0.1 : 0.2;
  bool shrinking = false;
  Unit grad{};
  Unit curv{};
  // Signed residuals of the set targets and their per-dimension secant slopes.
  const auto residuals = [&](const Unit& u) {
    std::array<double, 4> r{};
    const auto& [row, g, phi] = seen.at(key_of(u));
    const auto a = g.to_array();
    for (int n = 0; n < 4; ++n) {
      const double w = std::sqrt(target.weights[n]);
      if (target.values[n]) {
        r[n] = w * (a[n] - *target.values[n]) / std::max(*target.values[n], 1.0);
      } else if (target.ranges[n]) {
        const auto [lo, hi] = *target.ranges[n];
        r[n] = w * (a[n] < lo ? a[n] - lo : a[n] > hi ? a[n] - hi : 0.0) / std::max(lo, 1.0);
      }
    }
    return r;
  };
  std::array<Unit, 4> jac{};

  try {
    double fx = eval(x);
    accept(x);
    while (fx >= eps) {
      if (active.empty()) throw Stop{};
      ++iteration;
      // Poll the 2d interpolation points, most promising first, stopping at
      // the first improvement.
      struct Dir {
        int dim;
        double sign;
        double predicted;
      };
      std::vector<Dir> dirs;
      for (int i : active) {
        for (double sg : {1.0, -1.0}) dirs.push_back({i, sg, grad[i] * sg * delta + 0.5 * curv[i] * delta * delta});
      }
      std::shuffle(dirs.begin(), dirs.end(), rng);
      std::stable_sort(dirs.begin(), dirs.end(), [](const Dir& a, const Dir& b) { return a.predicted < b.predicted; });
      Unit best = x;
      double fbest = fx;
      std::map<int, std::array<double, 2>> vals;  // dim -> {f(x+), f(x-)}, NaN when not polled
      bool flat = false;  // some direction ties with the centre
      for (const Dir& d : dirs) {
        Unit y = x;
        y[d.dim] = std::clamp(x[d.dim] + d.sign * delta, 0.0, 1.0);
        if (y[d.dim] == x[d.dim]) continue;
        const double fy = eval(y);
        if (std::isfinite(fy) && std::isfinite(fx)) {
          const auto ry = residuals(y), rx = residuals(x);
          for (int n = 0; n < 4; ++n) jac[n][d.dim] = (ry[n] - rx[n]) / (y[d.dim] - x[d.dim]);
        }
        auto& v = vals.try_emplace(d.dim, std::array<double, 2>{NAN, NAN}).first->second;
        v[d.sign > 0 ? 0 : 1] = fy;
        if (fy == fx) flat = true;
        if (fy < fbest) {
          best = y;
          fbest = fy;
          break;
        }
      }
      // Separable quadratic model from the polled points.
      for (const auto& [i, v] : vals) {
        const double fp = v[0], fm = v[1];
        if (!std::isnan(fp) && !std::isnan(fm) && std::isfinite(fp) && std::isfinite(fm)) {
          grad[i] = (fp - fm) / (2.0 * delta);
          curv[i] = (fp - 2.0 * fx + fm) / (delta * delta);
        } else if (!std::isnan(fp) && std::isfinite(fp)) {
          grad[i] = (fp - fx) / delta;
          curv[i] = 0.0;
        } else if (!std::isnan(fm) && std::isfinite(fm)) {
          grad[i] = (fx - fm) / delta;
          curv[i] = 0.0;
        }
      }
      if (fbest < fx) {
        // Pattern move: continue along the successful direction while it helps.
        Unit step{};
        for (int i = 0; i < D; ++i) step[i] = best[i] - x[i];
        x = best;
        fx = fbest;
        accept(x);
        while (fx >= eps) {
          Unit y = x;
          bool moved = false;
          for (int i = 0; i < D; ++i) {
            y[i] = std::clamp(x[i] + step[i], 0.0, 1.0);
            moved |= y[i] != x[i];
          }
          if (!moved) break;
          const double fy = eval(y);
          if (!(fy < fx)) break;
          x = y;
          fx = fy;
          accept(x);
        }
        continue;
      }
      // Gauss-Newton step on the linear residual model, limited to the trust region.
      if (std::isfinite(fx)) {
        const int m = static_cast<int>(active.size());
        Eigen::MatrixXd J(4, m);
        Eigen::Vector4d r0;
        const auto rx = residuals(x);
        for (int n = 0; n < 4; ++n) {
          r0[n] = rx[n];
          for (int k = 0; k < m; ++k) J(n, k) = jac[n][active[k]];
        }
        Eigen::MatrixXd A = J.transpose() * J;
        if (A.trace() > 0.0) {
          A.diagonal().array() += 1e-6 * A.trace() + 1e-12;
          Eigen::VectorXd step = A.ldlt().solve(-J.transpose() * r0);
          const double len = step.cwiseAbs().maxCoeff();
          if (len > delta) step *= delta / len;
          Unit y = x;
          bool moved = false;
          for (int k = 0; k < m; ++k) {
            y[active[k]] = std::clamp(x[active[k]] + step[k], 0.0, 1.0);
            moved |= y[active[k]] != x[active[k]];
          }
          if (moved) {
            const double fy = eval(y);
            if (fy < fx) {
              x = y;
              fx = fy;
              accept(x);
              continue;
            }
          }
        }
      }
      // Trust-region step on the separable quadratic model of phi.
      Unit s{};
      bool any = false;
      for (int i : active) {
        double si = 0.0;
        if (curv[i] > 1e-12) si = -grad[i] / curv[i];
        else if (grad[i] != 0.0) si = grad[i] < 0.0 ? delta : -delta;
        si = std::clamp(si, -delta, delta);
        s[i] = std::clamp(x[i] + si, 0.0, 1.0) - x[i];
        any |= s[i] != 0.0;
      }
      if (any) {
        Unit y = x;
        for (int i = 0; i < D; ++i) y[i] += s[i];
        const double fy = eval(y);
        if (fy < fx) {
          x = y;
          fx = fy;
          accept(x);
          delta = std::min(2.0 * delta, dmax);
          continue;
        }
      }
      // No improvement: probe random multi-dimensional moves, then adapt the radius.
      bool improved = false;
      const double radius = flat && !shrinking ? std::min(2.0 * delta, dmax) : delta;
      for (int k = 0; k < 4 && !improved; ++k) {
        Unit y = x;
        double norm = 0.0;
        Unit z{};
        for (int i : active) {
          z[i] = gauss(rng);
          norm = std::max(norm, std::abs(z[i]));
        }
        if (norm == 0.0) continue;
        const double r = radius * std::pow(dmax / radius, unif(rng));
        for (int i : active) y[i] = std::clamp(x[i] + r * z[i] / norm, 0.0, 1.0);
        const double fy = eval(y);
        if (fy < fx) {
          x = y;
          fx = fy;
          accept(x);
          improved = true;
        }
      }
      if (improved) continue;
      if (flat && !shrinking) {
        if (delta >= dmax) shrinking = true;
        delta = std::min(2.0 * delta, dmax);
      } else {
        delta *= 0.25;
      }
      if (delta < dmin) {
        delta = 0.25;
        shrinking = false;
      }
    }
    state.converged = true;
  } catch (const Stop&) {
  }

  // Export at the best point.
  PipelineResult r = proceduralize(model, state.theta, state.seed, &f.segmenter());
  state.grammar = std::move(r.grammar);
  state.gamma = evaluate(*state.grammar);
  state.phi = error(state.gamma, target);
  state.converged = state.phi < eps;
  return state;
}

void write_trace_csv(std::ostream& out, const GuidanceState& state) {
  out << "iteration,evaluation";
  for (const auto& n : ParamVector::names()) out << ',' << n;
  for (const auto* n : GrammarValues::names()) out << ',' << n;
  out << ",phi,accepted\n";
  out << std::setprecision(9);
  for (const auto& r : state.trace) {
    out << r.iteration << ',' << r.evaluation;
    for (double v : r.theta.to_array()) out << ',' << v;
    for (double v : r.gamma.to_array()) out << ',' << v;
    out << ',' << r.phi << ',' << (r.accepted ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Family of grammars
// ---------------------------------------------------------------------------

std::string rule_signature(const SplitGrammar& grammar) {
  std::vector<std::string> parts;
  for (const auto& r : grammar.rules) {
    std::ostringstream s;
    s << r.repetition[0] << 'x' << r.repetition[1] << 'x' << r.repetition[2] << (r.rotation ? 'R' : 'T') << '+'
      << r.splitOps.size();
    parts.push_back(s.str());
  }
  std::sort(parts.begin(), parts.end());
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ";") + p;
  return out;
}

namespace {

/// n stratified samples per dimension, strata shuffled independently.
std::vector<std::vector<double>> latin_hypercube(int n, int dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<double>> out(n, std::vector<double>(dims));
  for (int d = 0; d < dims; ++d) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int k = 0; k < n; ++k) out[k][d] = (perm[k] + unif(rng)) / n;
  }
  return out;
}

}  // namespace

ValueRange sample_value_range(Approximator& f, int samples, std::uint64_t seed, std::vector<ParamVector>* starts) {
  if (samples < 1) throw ValidationError("/samples", "must be >= 1");
  const UnitBox box(f.bounds());
  std::mt19937_64 rng(seed);
  std::vector<ParamVector> points;
  for (const auto& u : latin_hypercube(samples, D, rng)) {
    Unit x{};
    std::copy(u.begin(), u.end(), x.begin());
    points.push_back(box.from_unit(x));
  }
  ValueRange r;
  bool first = true;
  const auto widen = [&](const GrammarValues& v) {
    const auto a = v.to_array();
    auto l = r.lo.to_array(), h = r.hi.to_array();
    for (int i = 0; i < 4; ++i) {
      l[i] = first ? a[i] : std::min(l[i], a[i]);
      h[i] = first ? a[i] : std::max(h[i], a[i]);
    }
    r.lo = GrammarValues::from_array(l);
    r.hi = GrammarValues::from_array(h);
    first = false;
  };
  widen(f(f.bounds().clamp(default_params(f.model()))));
  for (const auto& p : points) {
    try {
      widen(f(p));
    } catch (const EmptySegmentationError&) {
    }
  }
  if (starts) *starts = std::move(points);
  return r;
}

std::vector<Candidate> suggest_family(const Model& model, int samples, std::uint64_t seed, const SuggestOptions& options) {
  if (samples < 1) throw ValidationError("/samples", "must be >= 1");
  const ParamBounds bounds = default_bounds(model);
  Approximator f(model, bounds, seed);
  std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL);

  std::vector<ParamVector> starts;
  const ValueRange range = sample_value_range(f, samples, seed, &starts);
  const GrammarValues& lo = range.lo;
  const GrammarValues& hi = range.hi;
  const ParamVector defaults = default_params(model);

  std::vector<Candidate> out;
  const auto consider = [&](Candidate c) {
    for (const auto& o : out) {
      if (values_close(c.gamma, o.gamma, options.epsilon) && rule_signature(c.grammar) == rule_signature(o.grammar)) {
        return;
      }
    }
    c.preview = derive(c.grammar);
    out.push_back(std::move(c));
  };

  {
    PipelineResult r = proceduralize(model, defaults, seed, &f.segmenter());
    Candidate c;
    c.gamma = evaluate(r.grammar);
    c.target.values[0] = c.gamma.alp;
    c.target.values[1] = c.gamma.non;
    c.target.epsilon = options.epsilon;
    c.theta = defaults;
    c.grammar = std::move(r.grammar);
    c.converged = true;
    consider(std::move(c));
  }
  const auto targets = latin_hypercube(samples, 2, rng);
  for (int k = 0; k < samples; ++k) {
    TargetSpec t;
    t.epsilon = options.epsilon;
    t.values[0] = std::round(lo.alp + targets[k][0] * (hi.alp - lo.alp));
    t.values[1] = std::round(lo.non + targets[k][1] * (hi.non - lo.non));
    GuidanceState st;
    st.bounds = bounds;
    st.theta = starts[k];
    st.warmStart = true;
    st.budget = options.budgetPerSample;
    st.seed = seed + static_cast<std::uint64_t>(k) + 1;
    GuidanceState res = optimize(model, t, st, &f);
    if (!res.converged) continue;
    Candidate c;
    c.target = t;
    c.theta = res.theta;
    c.gamma = res.gamma;
    c.phi = res.phi;
    c.converged = true;
    c.grammar = std::move(*res.grammar);
    consider(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

GuidanceConfig GuidanceConfig::from_json(const ojson& j) {
  if (!j.is_object()) throw ValidationError("/", "expected an object");
  GuidanceConfig c;
  ojson t = ojson::object();
  if (j.contains("targets")) t["values"] = j["targets"];
  if (j.contains("target")) t["values"] = j["target"];
  for (const char* k : {"weights", "ranges", "epsilon"}) {
    if (j.contains(k)) t[k] = j[k];
  }
  c.target = TargetSpec::from_json(t, "");
  if (j.contains("bounds")) {
    if (!j["bounds"].is_object()) throw ValidationError("/bounds", "expected an object");
    for (const auto& [k, v] : j["bounds"].items()) {
      if (ParamVector::index_of(k) < 0) throw ValidationError("/bounds/" + k, "unknown parameter");
      const auto pair = read_pair(v, "/bounds/" + k);
      if (pair[0] > pair[1]) throw ValidationError("/bounds/" + k, "min exceeds max");
      c.bounds[k] = pair;
    }
  }
  if (j.contains("theta")) {
    if (!j["theta"].is_object()) throw ValidationError("/theta", "expected an object");
    for (const auto& [k, v] : j["theta"].items()) {
      if (ParamVector::index_of(k) < 0) throw ValidationError("/theta/" + k, "unknown parameter");
      c.theta[k] = read_number(v, "/theta/" + k);
    }
  }
  if (j.contains("budget")) {
    if (!j["budget"].is_number_integer() || j["budget"].get<long long>() <= 0) {
      throw ValidationError("/budget", "expected a positive integer");
    }
    c.budget = j["budget"].get<int>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) {
      throw ValidationError("/seed", "expected a non-negative integer");
    }
    c.seed = j["seed"].get<std::uint64_t>();
  }
  return c;
}

GuidanceConfig GuidanceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("/", std::string("malformed JSON: ") + e.what());
  }
  return from_json(j);
}

ojson GuidanceConfig::to_json() const {
  ojson j = target.to_json();
  ojson out;
  out["targets"] = j["values"];
  out["weights"] = j["weights"];
  out["ranges"] = j["ranges"];
  out["epsilon"] = j["epsilon"];
  ojson b = ojson::object();
  for (const auto& [k, v] : bounds) b[k] = {v[0], v[1]};
  out["bounds"] = b;
  ojson t = ojson::object();
  for (const auto& [k, v] : theta) t[k] = v;
  out["theta"] = t;
  out["budget"] = budget;
  out["seed"] = seed;
  return out;
}

GuidanceState GuidanceConfig::make_state(const Model& model) const {
  GuidanceState s = GuidanceState::for_model(model, seed);
  s.budget = budget;
  for (const auto& [k, v] : bounds) {
    const int i = ParamVector::index_of(k);
    s.bounds.lo[i] = v[0];
    s.bounds.hi[i] = v[1];
  }
  auto a = s.theta.to_array();
  for (const auto& [k, v] : theta) a[ParamVector::index_of(k)] = v;
  s.theta = s.bounds.clamp(ParamVector::from_array(a));
  s.warmStart = !theta.empty();
  return s;
}

}  // namespace gproc
