#pragma once

#include <string_view>
#include <vector>

#include "maskforge/grid.hpp"

namespace maskforge {

enum class SmoothnessKind { tv, btv };

/// How g(M) is scaled. `sum` uses raw sums over cells; `mean` divides both
/// the size and the smoothness term by the number of mask cells, which keeps
/// lambda values comparable across mask resolutions.
enum class PenaltyNormalization { sum, mean };

std::string_view to_string(SmoothnessKind kind);
SmoothnessKind smoothness_kind_from_string(std::string_view name);
std::string_view to_string(PenaltyNormalization n);
PenaltyNormalization normalization_from_string(std::string_view name);

struct RegularizerConfig {
  double lambda1 = 1.0;
  double lambda2 = 20.0;
  SmoothnessKind smoothness = SmoothnessKind::btv;
  double tv_beta = 2.0;
  double btv_sigma = 0.01;
  PenaltyNormalization normalization = PenaltyNormalization::mean;

  void validate() const;
  friend bool operator==(const RegularizerConfig&, const RegularizerConfig&) = default;
};

/// A penalty value and its gradient with respect to the mask.
struct Penalty {
  double value = 0.0;
  Grid grad;
};

/// sum(1 - M); gradient is -1 everywhere.
Penalty l1_deficit(const Grid& mask);

/// sum over in-bounds forward differences of |d|^beta, right and down.
Penalty tv(const Grid& mask, double beta);

/// Per-difference weights exp(-dI^2 / sigma^2) of the bilateral term. The
/// image is area-pooled to mask resolution and reduced to luminance first.
/// `horizontal` holds h*(w-1) entries, `vertical` (h-1)*w, row-major.
struct EdgeWeights {
  int height = 0;
  int width = 0;
  std::vector<double> horizontal;
  std::vector<double> vertical;
};

EdgeWeights bilateral_weights(const Grid& image, int mask_h, int mask_w, double sigma);
EdgeWeights unit_weights(int mask_h, int mask_w);

/// TV with each difference term scaled by its weight.
Penalty weighted_tv(const Grid& mask, const EdgeWeights& weights, double beta);

/// Bilateral total variation of `mask` guided by `image`.
Penalty btv(const Grid& mask, const Grid& image, double beta, double sigma);

/// g(M) = lambda1 * l1_deficit + lambda2 * (tv | btv), normalized per config.
Penalty g_total(const Grid& mask, const Grid& image, const RegularizerConfig& cfg);

/// g(M) with the image-dependent weights computed once, for repeated
/// evaluation at a fixed mask resolution.
class MaskRegularizer {
 public:
  MaskRegularizer(const Grid& image, int mask_h, int mask_w, const RegularizerConfig& cfg);

  Penalty operator()(const Grid& mask) const;
  double value(const Grid& mask) const { return (*this)(mask).value; }

 private:
  RegularizerConfig cfg_;
  EdgeWeights weights_;
};

}  // namespace maskforge
