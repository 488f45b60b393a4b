#include "maskforge/optimizer.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>

namespace maskforge {
namespace {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct Upsampled {
  Grid x;
  Grid y;
  Grid xy;
};

Upsampled upsample_masks(const ExplanationProblem& p, const Grid& x, const Grid& y) {
  const int h = p.image.height();
  const int w = p.image.width();
  return {upsample_bilinear(x, h, w), upsample_bilinear(y, h, w), upsample_bilinear(x * y, h, w)};
}

bool uses_x(Variant v) { return v != Variant::insertion_only; }
bool uses_y(Variant v) { return v != Variant::igos_deletion_only; }

// Scores every blended image of the summed path objective in one batch and
// returns sum_s [score terms] + sum_s g(t * mask).
double evaluate_path(const ExplanationProblem& p, Variant variant, int steps, const Grid& x,
                     const Grid& y) {
  const Upsampled up = upsample_masks(p, x, y);
  std::vector<Grid> deletion_images;
  std::vector<Grid> insertion_images;
  double reg = 0.0;
  for (int s = 1; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    switch (variant) {
      case Variant::igos_deletion_only:
        deletion_images.push_back(blend(p.image, p.baseline, up.x * t));
        reg += p.regularizer.value(x * t);
        break;
      case Variant::insertion_only:
        insertion_images.push_back(blend(p.baseline, p.image, up.y * t));
        reg += p.regularizer.value(y * t);
        break;
      case Variant::igos_pp:
      case Variant::naive_combined:
        deletion_images.push_back(blend(p.image, p.baseline, up.x * t));
        deletion_images.push_back(blend(p.image, p.baseline, up.xy * t));
        insertion_images.push_back(blend(p.baseline, p.image, up.y * t));
        insertion_images.push_back(blend(p.baseline, p.image, up.xy * t));
        reg += p.regularizer.value((x * y) * t);
        break;
    }
  }
  double total = reg;
  for (double v : p.model.scores(deletion_images, p.class_id)) total += v;
  for (double v : p.model.scores(insertion_images, p.class_id)) total -= v;
  return total;
}

// Descent direction of one variant at (x, y).
std::pair<Grid, Grid> variant_direction(const ExplanationProblem& p, Variant variant,
                                        const Grid& x, const Grid& y, const IGConfig& ig) {
  const Grid zeros(x.height(), x.width(), 1);
  switch (variant) {
    case Variant::igos_pp: {
      TotalGradient tg = total_gradient(p, x, y, ig);
      return {std::move(tg.grad_x), std::move(tg.grad_y)};
    }
    case Variant::naive_combined: {
      TotalGradient tg = total_gradient(p, x, y, ig);
      Grid d = tg.grad_x + tg.grad_y;
      return {d, d};
    }
    case Variant::igos_deletion_only: {
      Grid d = ig_deletion(p.model, p.image, p.baseline, x, p.class_id, ig);
      d += p.regularizer(x).grad;
      return {std::move(d), zeros};
    }
    case Variant::insertion_only: {
      Grid d = ig_insertion(p.model, p.image, p.baseline, y, p.class_id, ig);
      d += p.regularizer(y).grad;
      return {zeros, std::move(d)};
    }
  }
  throw std::logic_error("unknown variant");
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::igos_pp: return "igos_pp";
    case Variant::igos_deletion_only: return "igos_deletion_only";
    case Variant::insertion_only: return "insertion_only";
    case Variant::naive_combined: return "naive_combined";
  }
  return "igos_pp";
}

Variant variant_from_string(std::string_view name) {
  if (name == "igos_pp") return Variant::igos_pp;
  if (name == "igos_deletion_only") return Variant::igos_deletion_only;
  if (name == "insertion_only") return Variant::insertion_only;
  if (name == "naive_combined") return Variant::naive_combined;
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected igos_pp, igos_deletion_only, insertion_only or "
                              "naive_combined)");
}

void LineSearchConfig::validate() const {
  if (!(alpha_init > 0.0)) throw std::invalid_argument("line search alpha_init must be positive");
  if (!(shrink > 0.0 && shrink < 1.0)) throw std::invalid_argument("line search shrink must lie in (0, 1)");
  if (!(armijo_beta > 0.0 && armijo_beta < 1.0)) {
    throw std::invalid_argument("line search armijo_beta must lie in (0, 1)");
  }
  if (max_trials < 1) throw std::invalid_argument("line search max_trials must be >= 1");
}

void OptimizerConfig::validate() const {
  if (mask_h <= 0 || mask_w <= 0) throw std::invalid_argument("mask resolution must be positive");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(low_confidence_floor >= 0.0)) throw std::invalid_argument("low_confidence_floor must be >= 0");
  reg.validate();
  ig.validate();
  line_search.validate();
}

double joint_objective(const ExplanationProblem& p, const Grid& mask_x, const Grid& mask_y) {
  const Upsampled up = upsample_masks(p, mask_x, mask_y);
  const std::vector<Grid> deletion{blend(p.image, p.baseline, up.x),
                                   blend(p.image, p.baseline, up.xy)};
  const std::vector<Grid> insertion{blend(p.baseline, p.image, up.y),
                                    blend(p.baseline, p.image, up.xy)};
  const auto del = p.model.scores(deletion, p.class_id);
  const auto ins = p.model.scores(insertion, p.class_id);
  return del[0] - ins[0] + del[1] - ins[1] + p.regularizer.value(mask_x * mask_y);
}

double variant_objective(const ExplanationProblem& p, Variant variant, const Grid& mask_x,
                         const Grid& mask_y) {
  switch (variant) {
    case Variant::igos_pp:
    case Variant::naive_combined:
      return joint_objective(p, mask_x, mask_y);
    case Variant::igos_deletion_only:
      return p.model.score(apply_mask(p.image, p.baseline, mask_x), p.class_id) +
             p.regularizer.value(mask_x);
    case Variant::insertion_only:
      return -p.model.score(apply_mask(p.baseline, p.image, mask_y), p.class_id) +
             p.regularizer.value(mask_y);
  }
  throw std::logic_error("unknown variant");
}

double path_objective(const ExplanationProblem& p, Variant variant, int steps, const Grid& mask_x,
                      const Grid& mask_y) {
  if (steps < 1) throw std::invalid_argument("path_objective: steps must be >= 1");
  return evaluate_path(p, variant, steps, mask_x, mask_y);
}

TotalGradient total_gradient(const ExplanationProblem& p, const Grid& mask_x, const Grid& mask_y,
                             const IGConfig& ig) {
  if (!mask_x.same_shape(mask_y)) throw std::invalid_argument("total_gradient: mask shapes differ");
  IGConfig quiet = ig;
  quiet.noise_sigma = 0.0;
  IGConfig noisy_x = ig;
  IGConfig noisy_y = ig;
  noisy_y.seed = derive_seed(ig.seed, 0x79);

  const Grid mask_xy = mask_x * mask_y;
  Grid shared = ig_deletion(p.model, p.image, p.baseline, mask_xy, p.class_id, quiet);
  shared += ig_insertion(p.model, p.image, p.baseline, mask_xy, p.class_id, quiet);
  shared += p.regularizer(mask_xy).grad;

  TotalGradient out;
  out.grad_x = ig_deletion(p.model, p.image, p.baseline, mask_x, p.class_id, noisy_x);
  out.grad_x += shared * mask_y;
  out.grad_y = ig_insertion(p.model, p.image, p.baseline, mask_y, p.class_id, noisy_y);
  out.grad_y += shared * mask_x;
  out.objective = joint_objective(p, mask_x, mask_y);
  return out;
}

TotalGradient total_gradient(const ScoreModel& model, const Grid& image, const Grid& baseline,
                             const Grid& mask_x, const Grid& mask_y, int class_id,
                             const RegularizerConfig& reg, const IGConfig& ig) {
  const MaskRegularizer regularizer(image, mask_x.height(), mask_x.width(), reg);
  return total_gradient(ExplanationProblem{model, image, baseline, class_id, regularizer}, mask_x,
                        mask_y, ig);
}

LineSearchOutcome line_search(const std::function<double(double)>& path_at,
                              double direction_norm_sq, const LineSearchConfig& cfg,
                              const std::function<bool(double)>& also_accept) {
  cfg.validate();
  LineSearchOutcome out;
  out.path_before = path_at(0.0);
  out.path_after = out.path_before;
  double alpha = cfg.alpha_init;
  for (int t = 0; t < cfg.max_trials; ++t, alpha *= cfg.shrink) {
    ++out.trials;
    const double candidate = path_at(alpha);
    if (candidate - out.path_before <= -alpha * cfg.armijo_beta * direction_norm_sq &&
        (!also_accept || also_accept(alpha))) {
      out.alpha = alpha;
      out.path_after = candidate;
      return out;
    }
  }
  return out;
}

Grid project_direction(const Grid& mask, Grid direction) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if ((mask[i] >= 1.0 && direction[i] < 0.0) || (mask[i] <= 0.0 && direction[i] > 0.0)) {
      direction[i] = 0.0;
    }
  }
  return direction;
}

Grid default_baseline(const Grid& image, const OptimizerConfig& cfg) {
  return make_baseline(image, cfg.baseline, derive_seed(cfg.seed, 0xba5e));
}

HeatmapResult optimize(const ScoreModel& model, const Grid& image, int class_id,
                       const OptimizerConfig& cfg) {
  return optimize(model, image, default_baseline(image, cfg), class_id, cfg);
}

HeatmapResult optimize(const ScoreModel& model, const Grid& image, const Grid& baseline,
                       int class_id, const OptimizerConfig& cfg) {
  cfg.validate();
  if (cfg.mask_h > image.height() || cfg.mask_w > image.width()) {
    throw std::invalid_argument("mask resolution exceeds the image resolution");
  }
  if (!image.same_shape(baseline)) throw std::invalid_argument("baseline shape differs from the image");

  const MaskRegularizer regularizer(image, cfg.mask_h, cfg.mask_w, cfg.reg);
  const ExplanationProblem problem{model, image, baseline, class_id, regularizer};
  const Variant variant = cfg.variant;

  HeatmapResult result;
  result.config = cfg;
  result.class_id = class_id;
  result.mask_x = Grid::ones(cfg.mask_h, cfg.mask_w);
  result.mask_y = Grid::ones(cfg.mask_h, cfg.mask_w);
  result.mask_xy = Grid::ones(cfg.mask_h, cfg.mask_w);

  result.initial_score = model.score(image, class_id);
  result.low_confidence = result.initial_score < cfg.low_confidence_floor;
  result.initial_objective = variant_objective(problem, variant, result.mask_x, result.mask_y);

  try {
    for (int k = 0; k < cfg.iterations; ++k) {
      IterationRecord rec;
      rec.iteration = k;
      if (cfg.record_masks) {
        rec.mask_x_before = result.mask_x;
        rec.mask_y_before = result.mask_y;
      }

      IGConfig ig = cfg.ig;
      ig.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1);
      auto [dx, dy] = variant_direction(problem, variant, result.mask_x, result.mask_y, ig);
      dx = project_direction(result.mask_x, std::move(dx));
      dy = project_direction(result.mask_y, std::move(dy));
      if (variant == Variant::naive_combined) dy = dx;
      // The naive variant moves one mask, so its step norm counts it once.
      rec.direction_norm_sq =
          (uses_x(variant) ? dot(dx, dx) : 0.0) +
          (uses_y(variant) && variant != Variant::naive_combined ? dot(dy, dy) : 0.0);

      const auto candidate = [&](double alpha) {
        return std::pair{project_unit_interval(result.mask_x - dx * alpha),
                         project_unit_interval(result.mask_y - dy * alpha)};
      };
      const auto path_at = [&](double alpha) {
        if (alpha == 0.0) return path_objective(problem, variant, cfg.ig.steps, result.mask_x, result.mask_y);
        const auto [cx, cy] = candidate(alpha);
        return path_objective(problem, variant, cfg.ig.steps, cx, cy);
      };

      if (cfg.line_search.fixed_step) {
        rec.alpha = cfg.line_search.alpha_init;
        rec.trials = 0;
        rec.path_before = path_at(0.0);
        rec.path_after = path_at(rec.alpha);
      } else {
        // Path-sum descent alone does not bound the objective at the mask
        // itself, so a trial must also not raise it.
        const double current = result.trace.empty() ? result.initial_objective : result.trace.back().objective;
        const auto no_increase = [&](double alpha) {
          const auto [cx, cy] = candidate(alpha);
          return variant_objective(problem, variant, cx, cy) <= current;
        };
        const LineSearchOutcome ls = line_search(path_at, rec.direction_norm_sq, cfg.line_search, no_increase);
        rec.alpha = ls.alpha;
        rec.trials = ls.trials;
        rec.path_before = ls.path_before;
        rec.path_after = ls.path_after;
      }

      if (rec.alpha > 0.0) {
        auto [nx, ny] = candidate(rec.alpha);
        result.mask_x = std::move(nx);
        result.mask_y = std::move(ny);
        result.mask_xy = result.mask_x * result.mask_y;
      }
      rec.objective = variant_objective(problem, variant, result.mask_x, result.mask_y);
      result.trace.push_back(std::move(rec));
    }
  } catch (const std::exception& e) {
    throw OptimizationError(std::string("optimization aborted: ") + e.what(), std::move(result));
  }
  return result;
}

}  // namespace maskforge
