#include "maskforge/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace maskforge {
namespace {

// Scores are requested in chunks so large images do not pile up in memory.
constexpr std::size_t kScoreChunk = 16;

EvaluationCurve pixel_swap_curve(const ScoreModel& model, const Grid& start, const Grid& finish,
                                 const Grid& heatmap, int class_id, int pixels_per_step) {
  if (!start.same_shape(finish)) {
    throw std::invalid_argument("causal metric: image and baseline differ in shape");
  }
  if (heatmap.channels() != 1) throw std::invalid_argument("causal metric: heatmap must be single-channel");
  if (heatmap.height() > start.height() || heatmap.width() > start.width()) {
    throw std::invalid_argument("causal metric: heatmap is larger than the image");
  }
  if (pixels_per_step < 1) throw std::invalid_argument("causal metric: pixels_per_step must be >= 1");

  const auto order = rank_pixels(heatmap, start.height(), start.width());
  const std::size_t total = order.size();
  const std::size_t plane = start.plane_size();

  std::vector<double> fractions{0.0};
  std::vector<double> confidences;
  std::vector<Grid> pending{start};
  Grid work = start;

  const auto flush = [&] {
    const auto s = model.scores(pending, class_id);
    confidences.insert(confidences.end(), s.begin(), s.end());
    pending.clear();
  };

  std::size_t done = 0;
  while (done < total) {
    const std::size_t next = std::min(total, done + static_cast<std::size_t>(pixels_per_step));
    for (std::size_t i = done; i < next; ++i) {
      const std::size_t px = order[i];
      for (int c = 0; c < start.channels(); ++c) {
        work[c * plane + px] = finish[c * plane + px];
      }
    }
    done = next;
    fractions.push_back(static_cast<double>(done) / static_cast<double>(total));
    pending.push_back(work);
    if (pending.size() >= kScoreChunk) flush();
  }
  if (!pending.empty()) flush();

  EvaluationCurve curve;
  curve.points.reserve(fractions.size());
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    curve.points.push_back({fractions[i], confidences[i]});
  }
  curve.auc = trapezoid_auc(curve.points);
  return curve;
}

}  // namespace

double trapezoid_auc(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].confidence + points[i - 1].confidence) *
            (points[i].fraction - points[i - 1].fraction);
  }
  return area;
}

std::vector<std::size_t> rank_pixels(const Grid& heatmap, int target_h, int target_w) {
  const Grid up = upsample_bilinear(heatmap, target_h, target_w);
  std::vector<std::size_t> order(up.plane_size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto v = up.channel(0);
  // Descending saliency (1 - value) is ascending value.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return order;
}

int default_pixels_per_step(int total_pixels) {
  if (total_pixels <= 0) throw std::invalid_argument("default_pixels_per_step: no pixels");
  return (total_pixels + 99) / 100;
}

EvaluationCurve deletion_curve(const ScoreModel& model, const Grid& image, const Grid& heatmap,
                               int class_id, const Grid& baseline, int pixels_per_step) {
  return pixel_swap_curve(model, image, baseline, heatmap, class_id, pixels_per_step);
}

EvaluationCurve insertion_curve(const ScoreModel& model, const Grid& image, const Grid& heatmap,
                                int class_id, const Grid& baseline, int pixels_per_step) {
  return pixel_swap_curve(model, baseline, image, heatmap, class_id, pixels_per_step);
}

}  // namespace maskforge
