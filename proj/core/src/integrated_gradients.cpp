#include "maskforge/integrated_gradients.hpp"

#include <random>
#include <stdexcept>
#include <vector>

#include "maskforge/perturbation.hpp"

namespace maskforge {

void IGConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("IG steps must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("IG noise_sigma must be >= 0");
}

Grid ig_deletion(const ScoreModel& model, const Grid& image, const Grid& baseline,
                 const Grid& mask, int class_id, const IGConfig& cfg) {
  cfg.validate();
  if (mask.channels() != 1) throw std::invalid_argument("ig: mask must be single-channel");
  if (!within_unit_interval(mask)) throw std::invalid_argument("ig: mask values must lie in [0, 1]");
  if (!image.same_shape(baseline)) throw std::invalid_argument("ig: image and baseline differ in shape");

  const int height = image.height();
  const int width = image.width();
  const Grid mask_up = upsample_bilinear(mask, height, width);
  const Grid delta = image - baseline;

  // Per-step noise seeds come from one stream so every step is independent.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x16a1u};
  std::vector<std::uint32_t> step_seeds(static_cast<std::size_t>(cfg.steps));
  seq.generate(step_seeds.begin(), step_seeds.end());

  std::vector<Grid> path;
  path.reserve(static_cast<std::size_t>(cfg.steps));
  for (int s = 1; s <= cfg.steps; ++s) {
    const double t = static_cast<double>(s) / cfg.steps;
    Grid blended = blend(image, baseline, mask_up * t);
    if (cfg.noise_sigma > 0.0) {
      blended = perturb_with_noise(blended, cfg.noise_sigma, step_seeds[static_cast<std::size_t>(s - 1)]);
    }
    path.push_back(std::move(blended));
  }
  const std::vector<Grid> grads = model.input_gradients(path, class_id);
  if (grads.size() != path.size()) throw std::runtime_error("ig: model returned a short gradient batch");

  Grid accum(height, width, 1);
  auto acc = accum.channel(0);
  for (int s = 1; s <= cfg.steps; ++s) {
    const Grid& g = grads[static_cast<std::size_t>(s - 1)];
    if (!g.same_shape(image)) throw std::runtime_error("ig: gradient shape differs from the image");
    const double t = static_cast<double>(s) / cfg.steps;
    for (int c = 0; c < image.channels(); ++c) {
      const auto gc = g.channel(c);
      const auto dc = delta.channel(c);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t * gc[i] * dc[i];
    }
  }
  accum *= 1.0 / cfg.steps;
  return upsample_adjoint(accum, mask.height(), mask.width());
}

Grid ig_insertion(const ScoreModel& model, const Grid& image, const Grid& baseline,
                  const Grid& mask, int class_id, const IGConfig& cfg) {
  Grid out = ig_deletion(model, baseline, image, mask, class_id, cfg);
  out *= -1.0;
  return out;
}

}  // namespace maskforge
