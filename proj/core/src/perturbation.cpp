#include "maskforge/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace maskforge {

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::blur: return "blur";
    case BaselineKind::constant: return "constant";
    case BaselineKind::noise: return "noise";
  }
  return "blur";
}

BaselineKind baseline_kind_from_string(std::string_view name) {
  if (name == "blur") return BaselineKind::blur;
  if (name == "constant") return BaselineKind::constant;
  if (name == "noise") return BaselineKind::noise;
  throw std::invalid_argument("unknown baseline kind '" + std::string(name) +
                              "' (expected blur, constant or noise)");
}

Grid make_baseline(const Grid& image, const BaselineSpec& spec, std::uint64_t seed) {
  if (image.empty()) throw std::invalid_argument("make_baseline: empty image");
  switch (spec.kind) {
    case BaselineKind::blur:
      if (!(spec.blur_sigma > 0.0)) {
        throw std::invalid_argument("make_baseline: blur_sigma must be positive");
      }
      return gaussian_blur(image, spec.blur_sigma);
    case BaselineKind::constant:
      if (!std::isfinite(spec.constant_value)) {
        throw std::invalid_argument("make_baseline: constant_value must be finite");
      }
      return Grid(image.height(), image.width(), image.channels(), spec.constant_value);
    case BaselineKind::noise: {
      if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
        throw std::invalid_argument("make_baseline: noise_sigma must be >= 0");
      }
      Grid out(image.height(), image.width(), image.channels());
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.5, spec.noise_sigma);
      for (double& v : out.values()) v = std::clamp(normal(rng), 0.0, 1.0);
      return out;
    }
  }
  throw std::invalid_argument("make_baseline: unknown kind");
}

Grid blend(const Grid& image, const Grid& baseline, const Grid& full_res_mask) {
  if (!image.same_shape(baseline)) {
    throw std::invalid_argument("apply_mask: image and baseline differ in shape");
  }
  if (!full_res_mask.same_plane(image) || full_res_mask.channels() != 1) {
    throw std::invalid_argument("apply_mask: mask must be single-channel at image resolution");
  }
  Grid out(image.height(), image.width(), image.channels());
  const auto m = full_res_mask.channel(0);
  for (int c = 0; c < image.channels(); ++c) {
    const auto a = image.channel(c);
    const auto b = baseline.channel(c);
    auto o = out.channel(c);
    for (std::size_t i = 0; i < m.size(); ++i) o[i] = a[i] * m[i] + b[i] * (1.0 - m[i]);
  }
  return out;
}

Grid apply_mask(const Grid& image, const Grid& baseline, const Grid& mask) {
  if (mask.channels() != 1) throw std::invalid_argument("apply_mask: mask must be single-channel");
  if (!within_unit_interval(mask)) {
    throw std::invalid_argument("apply_mask: mask values must lie in [0, 1]");
  }
  return blend(image, baseline, upsample_bilinear(mask, image.height(), image.width()));
}

Grid perturb_with_noise(const Grid& image, double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw std::invalid_argument("perturb_with_noise: noise_sigma must be >= 0");
  }
  if (noise_sigma == 0.0) return image;
  Grid out = image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise_sigma);
  for (double& v : out.values()) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

}  // namespace maskforge
