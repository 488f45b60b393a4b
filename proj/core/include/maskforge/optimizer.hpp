#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "maskforge/grid.hpp"
#include "maskforge/integrated_gradients.hpp"
#include "maskforge/model.hpp"
#include "maskforge/perturbation.hpp"
#include "maskforge/regularizers.hpp"

namespace maskforge {

/// Which objective the optimizer descends.
///  - igos_pp: separate deletion (x) and insertion (y) masks, joint objective
///    on x, y and their product.
///  - igos_deletion_only: one mask on f(phi(M)) + g(M).
///  - insertion_only: one mask on -f(phi(1 - M)) + g(M).
///  - naive_combined: the joint objective restricted to x == y.
enum class Variant { igos_pp, igos_deletion_only, insertion_only, naive_combined };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

struct LineSearchConfig {
  /// First trial step. Mask gradients are per-cell quantities, so useful
  /// steps grow with the cell count; see default_alpha_init().
  double alpha_init = 2000.0;
  double shrink = 0.5;
  double armijo_beta = 0.1;
  int max_trials = 10;
  /// Skip the search and always step by alpha_init.
  bool fixed_step = false;

  void validate() const;
  friend bool operator==(const LineSearchConfig&, const LineSearchConfig&) = default;
};

struct OptimizerConfig {
  int mask_h = 28;
  int mask_w = 28;
  Variant variant = Variant::igos_pp;
  int iterations = 15;
  RegularizerConfig reg;
  IGConfig ig;
  LineSearchConfig line_search;
  BaselineSpec baseline;
  /// Master seed; IG noise and noise baselines derive their streams from it.
  std::uint64_t seed = 0;
  /// Initial confidence below this flags the result as low-confidence.
  double low_confidence_floor = 0.01;
  /// Keep per-iteration mask snapshots in the trace.
  bool record_masks = false;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct IterationRecord {
  int iteration = 0;
  /// Noiseless objective of the variant after the update.
  double objective = 0.0;
  double alpha = 0.0;
  int trials = 0;
  /// Sum over IG path points of the objective before/after the step.
  double path_before = 0.0;
  double path_after = 0.0;
  double direction_norm_sq = 0.0;
  /// Masks before the update; filled only when record_masks is set.
  Grid mask_x_before;
  Grid mask_y_before;
};

struct HeatmapResult {
  Grid mask_xy;
  Grid mask_x;
  Grid mask_y;
  int class_id = 0;
  double initial_score = 0.0;
  double initial_objective = 0.0;
  bool low_confidence = false;
  std::vector<IterationRecord> trace;
  OptimizerConfig config;
};

/// Raised when the model fails mid-run; carries everything computed so far.
class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, HeatmapResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const HeatmapResult& partial() const { return partial_; }

 private:
  HeatmapResult partial_;
};

/// Everything the objectives need besides the masks.
struct ExplanationProblem {
  const ScoreModel& model;
  const Grid& image;
  const Grid& baseline;
  int class_id;
  const MaskRegularizer& regularizer;
};

struct TotalGradient {
  Grid grad_x;
  Grid grad_y;
  double objective = 0.0;
};

/// f(phi(x)) - f(phi(1-y)) + f(phi(xy)) - f(phi(1-xy)) + g(xy), no noise.
double joint_objective(const ExplanationProblem& p, const Grid& mask_x, const Grid& mask_y);

/// Integrated gradients of every score term of the joint objective plus the
/// regularizer gradient, routed to x and y through the product xy:
///
///   g_x = igdel(x) + [igdel(xy) + igins(xy) + grad g(xy)] * y
///   g_y = igins(y) + [igdel(xy) + igins(xy) + grad g(xy)] * x
///
/// Noise (ig.noise_sigma) enters only igdel(x) and igins(y).
TotalGradient total_gradient(const ExplanationProblem& p, const Grid& mask_x, const Grid& mask_y,
                             const IGConfig& ig);

TotalGradient total_gradient(const ScoreModel& model, const Grid& image, const Grid& baseline,
                             const Grid& mask_x, const Grid& mask_y, int class_id,
                             const RegularizerConfig& reg, const IGConfig& ig);

struct LineSearchOutcome {
  double alpha = 0.0;
  int trials = 0;
  double path_before = 0.0;
  double path_after = 0.0;
};

/// Backtracking search over alpha = alpha_init * shrink^t, t = 0..max_trials-1.
/// Accepts the first alpha with
///
///   path_at(alpha) - path_at(0) <= -alpha * armijo_beta * direction_norm_sq
///
/// and returns alpha = 0 when no trial passes. `path_at` evaluates the summed
/// path objective at the (already projected) candidate for a step size. When
/// `also_accept` is set, a trial must satisfy it as well.
LineSearchOutcome line_search(const std::function<double(double)>& path_at,
                              double direction_norm_sq, const LineSearchConfig& cfg,
                              const std::function<bool(double)>& also_accept = {});

/// Summed path objective sum_{s=1..S} F((s/S) x, (s/S) y) of a variant, with
/// g evaluated at the scaled product mask.
double path_objective(const ExplanationProblem& p, Variant variant, int steps, const Grid& mask_x,
                      const Grid& mask_y);

/// Noiseless objective of a variant at (x, y).
double variant_objective(const ExplanationProblem& p, Variant variant, const Grid& mask_x,
                         const Grid& mask_y);

/// Zeroes direction components that would push a mask already sitting on a
/// bound further outside [0, 1].
Grid project_direction(const Grid& mask, Grid direction);

/// The baseline optimize() builds from cfg.baseline and cfg.seed.
Grid default_baseline(const Grid& image, const OptimizerConfig& cfg);

/// Runs the mask optimization. Masks start at all-ones.
HeatmapResult optimize(const ScoreModel& model, const Grid& image, int class_id,
                       const OptimizerConfig& cfg);

/// Same, with a caller-supplied baseline instead of cfg.baseline.
HeatmapResult optimize(const ScoreModel& model, const Grid& image, const Grid& baseline,
                       int class_id, const OptimizerConfig& cfg);

}  // namespace maskforge
