#include "maskforge/regularizers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace maskforge {
namespace {

void require_mask(const Grid& mask, const char* what) {
  if (mask.channels() != 1) {
    throw std::invalid_argument(std::string(what) + ": mask must be single-channel");
  }
}

// |d|^beta and its derivative; the derivative at d == 0 is taken as 0.
struct PowerTerm {
  double value;
  double slope;
};

PowerTerm power_term(double d, double beta) {
  if (beta == 2.0) return {d * d, 2.0 * d};
  const double a = std::abs(d);
  if (a == 0.0) return {0.0, 0.0};
  const double v = std::pow(a, beta);
  return {v, beta * v / a * (d > 0.0 ? 1.0 : -1.0)};
}

}  // namespace

std::string_view to_string(SmoothnessKind kind) { return kind == SmoothnessKind::tv ? "tv" : "btv"; }

SmoothnessKind smoothness_kind_from_string(std::string_view name) {
  if (name == "tv") return SmoothnessKind::tv;
  if (name == "btv") return SmoothnessKind::btv;
  throw std::invalid_argument("unknown smoothness kind '" + std::string(name) + "' (expected tv or btv)");
}

std::string_view to_string(PenaltyNormalization n) {
  return n == PenaltyNormalization::sum ? "sum" : "mean";
}

PenaltyNormalization normalization_from_string(std::string_view name) {
  if (name == "sum") return PenaltyNormalization::sum;
  if (name == "mean") return PenaltyNormalization::mean;
  throw std::invalid_argument("unknown normalization '" + std::string(name) + "' (expected sum or mean)");
}

void RegularizerConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw std::invalid_argument("regularizer weights must be non-negative");
  }
  if (!(tv_beta > 0.0)) throw std::invalid_argument("tv_beta must be positive");
  if (smoothness == SmoothnessKind::btv && !(btv_sigma > 0.0)) {
    throw std::invalid_argument("btv_sigma must be positive");
  }
}

Penalty l1_deficit(const Grid& mask) {
  require_mask(mask, "l1_deficit");
  double value = 0.0;
  for (double m : mask.values()) value += 1.0 - m;
  return {value, Grid(mask.height(), mask.width(), 1, -1.0)};
}

EdgeWeights unit_weights(int mask_h, int mask_w) {
  EdgeWeights w;
  w.height = mask_h;
  w.width = mask_w;
  w.horizontal.assign(static_cast<std::size_t>(mask_h) * (mask_w - 1), 1.0);
  w.vertical.assign(static_cast<std::size_t>(mask_h - 1) * mask_w, 1.0);
  return w;
}

EdgeWeights bilateral_weights(const Grid& image, int mask_h, int mask_w, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("btv: sigma must be positive");
  if (image.height() < mask_h || image.width() < mask_w) {
    throw std::invalid_argument("btv: image is smaller than the mask");
  }
  const Grid lum = mean_channels(area_downsample(image, mask_h, mask_w));
  const double inv_s2 = 1.0 / (sigma * sigma);
  EdgeWeights w = unit_weights(mask_h, mask_w);
  for (int y = 0; y < mask_h; ++y) {
    for (int x = 0; x + 1 < mask_w; ++x) {
      const double d = lum.at(0, y, x + 1) - lum.at(0, y, x);
      w.horizontal[static_cast<std::size_t>(y) * (mask_w - 1) + x] = std::exp(-d * d * inv_s2);
    }
  }
  for (int y = 0; y + 1 < mask_h; ++y) {
    for (int x = 0; x < mask_w; ++x) {
      const double d = lum.at(0, y + 1, x) - lum.at(0, y, x);
      w.vertical[static_cast<std::size_t>(y) * mask_w + x] = std::exp(-d * d * inv_s2);
    }
  }
  return w;
}

Penalty weighted_tv(const Grid& mask, const EdgeWeights& weights, double beta) {
  require_mask(mask, "tv");
  if (!(beta > 0.0)) throw std::invalid_argument("tv: beta must be positive");
  const int h = mask.height();
  const int w = mask.width();
  if (weights.height != h || weights.width != w) {
    throw std::invalid_argument("tv: edge weights do not match the mask resolution");
  }
  Penalty out{0.0, Grid(h, w, 1)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      const double wt = weights.horizontal[static_cast<std::size_t>(y) * (w - 1) + x];
      const PowerTerm t = power_term(mask.at(0, y, x + 1) - mask.at(0, y, x), beta);
      out.value += wt * t.value;
      out.grad.at(0, y, x + 1) += wt * t.slope;
      out.grad.at(0, y, x) -= wt * t.slope;
    }
  }
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double wt = weights.vertical[static_cast<std::size_t>(y) * w + x];
      const PowerTerm t = power_term(mask.at(0, y + 1, x) - mask.at(0, y, x), beta);
      out.value += wt * t.value;
      out.grad.at(0, y + 1, x) += wt * t.slope;
      out.grad.at(0, y, x) -= wt * t.slope;
    }
  }
  return out;
}

Penalty tv(const Grid& mask, double beta) {
  return weighted_tv(mask, unit_weights(mask.height(), mask.width()), beta);
}

Penalty btv(const Grid& mask, const Grid& image, double beta, double sigma) {
  return weighted_tv(mask, bilateral_weights(image, mask.height(), mask.width(), sigma), beta);
}

MaskRegularizer::MaskRegularizer(const Grid& image, int mask_h, int mask_w,
                                 const RegularizerConfig& cfg)
    : cfg_(cfg) {
  cfg.validate();
  weights_ = cfg.smoothness == SmoothnessKind::btv
                 ? bilateral_weights(image, mask_h, mask_w, cfg.btv_sigma)
                 : unit_weights(mask_h, mask_w);
}

Penalty MaskRegularizer::operator()(const Grid& mask) const {
  Penalty size = l1_deficit(mask);
  Penalty smooth = weighted_tv(mask, weights_, cfg_.tv_beta);
  const double scale = cfg_.normalization == PenaltyNormalization::mean
                           ? 1.0 / static_cast<double>(mask.size())
                           : 1.0;
  Penalty out;
  out.value = scale * (cfg_.lambda1 * size.value + cfg_.lambda2 * smooth.value);
  out.grad = std::move(size.grad);
  out.grad *= cfg_.lambda1 * scale;
  smooth.grad *= cfg_.lambda2 * scale;
  out.grad += smooth.grad;
  return out;
}

Penalty g_total(const Grid& mask, const Grid& image, const RegularizerConfig& cfg) {
  return MaskRegularizer(image, mask.height(), mask.width(), cfg)(mask);
}

}  // namespace maskforge
