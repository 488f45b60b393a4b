#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maskforge/grid.hpp"
#include "maskforge/model.hpp"

namespace maskforge {

struct CurvePoint {
  double fraction = 0.0;
  double confidence = 0.0;
};

/// Confidence as a function of the fraction of pixels deleted or inserted.
struct EvaluationCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
};

/// Trapezoidal area under (fraction, confidence).
double trapezoid_auc(std::span<const CurvePoint> points);

/// Pixel order for the causal metrics. The heatmap is a mask: low values mark
/// important pixels (saliency = 1 - value). It is upsampled to the target
/// resolution and sorted by descending saliency, ties by row-major index.
std::vector<std::size_t> rank_pixels(const Grid& heatmap, int target_h, int target_w);

/// ceil(total_pixels / 100), giving 100-step curves.
int default_pixels_per_step(int total_pixels);

/// Starts at the image and swaps in baseline pixels (all channels together)
/// in rank order, `pixels_per_step` at a time, scoring after every step.
EvaluationCurve deletion_curve(const ScoreModel& model, const Grid& image, const Grid& heatmap,
                               int class_id, const Grid& baseline, int pixels_per_step);

/// Mirror of deletion_curve: starts at the baseline and inserts image pixels.
EvaluationCurve insertion_curve(const ScoreModel& model, const Grid& image, const Grid& heatmap,
                                int class_id, const Grid& baseline, int pixels_per_step);

}  // namespace maskforge
