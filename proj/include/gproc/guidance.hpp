#pragma once

#include "gproc/grammar.hpp"
#include "gproc/instance_tree.hpp"
#include "gproc/params.hpp"
#include "gproc/segmentation.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>

namespace gproc {

/// Thrown when f is asked to evaluate a parameter vector outside its bounds.
class OutOfBoundsError : public Error {
 public:
  using Error::Error;
};

/// Target grammar values; unset entries are don't-care.
struct TargetSpec {
  std::array<std::optional<double>, 4> values;
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  // Acceptable ranges. A range without a target value penalises the distance to the range.
  std::array<std::optional<std::array<double, 2>>, 4> ranges;
  double epsilon = 0.05;

  /// Throws ValidationError unless weights >= 0, ranges are ordered, epsilon > 0
  /// and at least one value or range is set.
  void validate() const;
  bool has_any() const;
  /// "alp=1,non=2" style assignments.
  static TargetSpec parse(const std::string& assignments);
  nlohmann::ordered_json to_json() const;
  /// Accepts {"alp": 1, ...} or {"values": {...}, "weights": {...}, "ranges": {...}, "epsilon": e}.
  static TargetSpec from_json(const nlohmann::ordered_json& j, const std::string& path = "");
};

/// Weighted relative L1 error over the set targets.
double error(const GrammarValues& actual, const TargetSpec& target);

/// True when |a - b| / max(|b|, 1) < eps for every component.
bool values_close(const GrammarValues& a, const GrammarValues& b, double eps);

/// Segmentation parameters as the pipeline uses them: similarity thresholds
/// and den rounded to 3 decimals, num rounded to an integer.
ShapeParams quantize(const ShapeParams& p);

struct PipelineResult {
  ComponentSet components;
  InstanceTree tree;
  std::vector<RepresentativeInstance> representatives;
  SplitGrammar grammar;
};

/// Full proceduralization: segmentation, instance tree, label refinement, join
/// canonicalization, pattern extraction and export. `segmenter` (for the same
/// model and seed) reuses cached similarity work.
PipelineResult proceduralize(const Model& model, const ParamVector& theta, std::uint64_t seed = 0,
                             Segmenter* segmenter = nullptr);

/// The approximator f: segmentation (cached by quantized shape parameters),
/// tree and labels, then grammar values counted from the representatives
/// without lattice fitting or export.
class Approximator {
 public:
  Approximator(const Model& model, ParamBounds bounds, std::uint64_t seed = 0);
  /// Throws OutOfBoundsError for out-of-bounds theta; propagates segmentation errors.
  GrammarValues operator()(const ParamVector& theta);

  int evaluations() const { return evaluations_; }
  const ParamBounds& bounds() const { return bounds_; }
  const Model& model() const { return model_; }
  std::uint64_t seed() const { return seed_; }
  Segmenter& segmenter() { return *segmenter_; }

 private:
  const Model& model_;
  ParamBounds bounds_;
  std::uint64_t seed_;
  std::unique_ptr<Segmenter> segmenter_;
  std::map<std::array<double, 5>, std::shared_ptr<const ComponentSet>> segmentations_;
  int evaluations_ = 0;
};

struct ValueRange {
  GrammarValues lo;
  GrammarValues hi;
};

/// Componentwise range of f over the default parameters and a Latin hypercube
/// of `samples` points in f's bounds; `starts` receives the sample points.
ValueRange sample_value_range(Approximator& f, int samples, std::uint64_t seed,
                              std::vector<ParamVector>* starts = nullptr);

struct TraceRow {
  int iteration = 0;
  int evaluation = 0;
  ParamVector theta;
  GrammarValues gamma;
  double phi = 0.0;
  bool accepted = false;
};

struct GuidanceState {
  ParamBounds bounds;
  ParamVector theta;  // start point (warm start) on input, best point on output
  bool warmStart = false;
  int budget = 200;
  std::uint64_t seed = 0;

  std::optional<SplitGrammar> grammar;  // exported at the best point after the search
  GrammarValues gamma;
  double phi = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
  bool cancelled = false;
  std::vector<TraceRow> trace;

  std::function<bool()> cancel;                    // polled between evaluations
  std::function<void(const TraceRow&)> onEvaluate;  // progress callback

  /// Fresh state for `model` with default bounds and parameters.
  static GuidanceState for_model(const Model& model, std::uint64_t seed = 0);
  const char* status() const;  // "converged", "budget-exhausted" or "cancelled"
};

/// Bound-constrained derivative-free minimisation of error(f(theta), target)
/// on the unit-scaled box: a coordinate poll with pattern moves, Gauss-Newton
/// and separable quadratic steps from the sampled values, and seeded random
/// probes with a cycling radius to leave plateaus of the piecewise-constant
/// objective. Stops when the error drops below epsilon or the budget is spent,
/// then runs the full pipeline once at the best point. `f` may be shared across
/// runs on the same model.
GuidanceState optimize(const Model& model, const TargetSpec& target, GuidanceState state,
                       Approximator* f = nullptr);

/// CSV with iteration, evaluation, the 11 parameters, the 4 values, phi and accepted.
void write_trace_csv(std::ostream& out, const GuidanceState& state);

struct Candidate {
  TargetSpec target;
  ParamVector theta;
  SplitGrammar grammar;
  GrammarValues gamma;
  double phi = 0.0;
  bool converged = false;
  Derivation preview;  // colour-coded by label
};

struct SuggestOptions {
  int budgetPerSample = 80;
  double epsilon = 0.05;
};

/// Samples targets over the reachable grammar-value range (Latin hypercube on
/// alp and non), optimizes each from a paired Latin-hypercube start point, and
/// keeps grammars that differ in their values or in the kind and shape of
/// their rules.
std::vector<Candidate> suggest_family(const Model& model, int samples, std::uint64_t seed,
                                      const SuggestOptions& options = {});

/// Structural fingerprint of a grammar's rules (repetitions, rotation, split counts).
std::string rule_signature(const SplitGrammar& grammar);

/// Guidance configuration file.
struct GuidanceConfig {
  TargetSpec target;
  std::map<std::string, std::array<double, 2>> bounds;  // per-dimension overrides
  std::map<std::string, double> theta;                  // start-point overrides
  int budget = 200;
  std::uint64_t seed = 0;

  static GuidanceConfig from_json(const nlohmann::ordered_json& j);
  static GuidanceConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  /// Default state for `model` with this configuration applied.
  GuidanceState make_state(const Model& model) const;
};

}  // namespace gproc
