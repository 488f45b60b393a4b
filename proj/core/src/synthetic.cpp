#include "maskforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace maskforge {
namespace {

// Whether sample i of an n -> N align-corners upsampling touches [lo, hi].
bool basis_touches(int i, int n, int big_n, int lo, int hi) {
  if (n == 1) return true;
  const double spacing = static_cast<double>(big_n - 1) / (n - 1);
  const double pos = i * spacing;
  return pos > lo - spacing && pos < hi + spacing;
}

Region draw_region(std::mt19937_64& rng, int height, int width, double min_cov, double max_cov) {
  std::uniform_real_distribution<double> coverage(min_cov, max_cov);
  std::uniform_real_distribution<double> aspect(std::log(0.6), std::log(1.6));
  const double area = coverage(rng) * height * width;
  const double ratio = std::exp(aspect(rng));
  const int rh = std::clamp(static_cast<int>(std::lround(std::sqrt(area * ratio))), 1, height);
  int rw = std::clamp(static_cast<int>(std::lround(area / rh)), 1, width);
  // Rounding can leave the rectangle just outside the coverage range.
  const double total = static_cast<double>(height) * width;
  while (rw < width && rh * rw < min_cov * total) ++rw;
  while (rw > 1 && rh * rw > max_cov * total) --rw;
  std::uniform_int_distribution<int> top(0, height - rh);
  std::uniform_int_distribution<int> left(0, width - rw);
  const int t = top(rng);
  const int l = left(rng);
  return {t, l, rh, rw};
}

}  // namespace

PlantedScene make_planted_scene(const PlantedSceneOptions& opts, std::uint64_t seed) {
  if (opts.height <= 0 || opts.width <= 0 || opts.channels <= 0) {
    throw std::invalid_argument("make_planted_scene: dimensions must be positive");
  }
  if (!(opts.min_coverage > 0.0 && opts.min_coverage <= opts.max_coverage && opts.max_coverage <= 1.0)) {
    throw std::invalid_argument("make_planted_scene: coverage range must satisfy 0 < min <= max <= 1");
  }
  std::mt19937_64 rng(seed);
  PlantedScene scene;
  scene.region = draw_region(rng, opts.height, opts.width, opts.min_coverage, opts.max_coverage);

  // Smooth background texture, then the region with a little grain.
  Grid noise(opts.height, opts.width, opts.channels);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : noise.values()) v = normal(rng);
  noise = gaussian_blur(noise, 2.0);
  const double spread = std::max(1e-12, std::max(std::abs(noise.min()), std::abs(noise.max())));

  scene.image = Grid(opts.height, opts.width, opts.channels);
  std::uniform_real_distribution<double> grain(-0.04, 0.04);
  for (int c = 0; c < opts.channels; ++c) {
    for (int y = 0; y < opts.height; ++y) {
      for (int x = 0; x < opts.width; ++x) {
        double v = opts.background_level + 0.12 * noise.at(c, y, x) / spread;
        if (scene.region.contains(y, x)) v = opts.region_level + grain(rng);
        scene.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return scene;
}

std::vector<PlantedScene> make_planted_suite(int count, const PlantedSceneOptions& opts,
                                             std::uint64_t seed) {
  std::vector<PlantedScene> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) out.push_back(make_planted_scene(opts, rng()));
  return out;
}

std::vector<LabeledImage> make_texture_dataset(int count, int height, int width,
                                               std::uint64_t seed, std::vector<Region>* regions) {
  if (height < 4 || width < 4) throw std::invalid_argument("make_texture_dataset: image too small");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 0.02);
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  if (regions != nullptr) regions->clear();
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    const Region region = draw_region(rng, height, width, 0.3, 0.5);
    Grid img(height, width, 1);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double v = 0.5 + jitter(rng);
        if (label == 1 && region.contains(y, x)) v += ((x + y) % 2 == 0) ? 0.3 : -0.3;
        img.at(0, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
    out.push_back({std::move(img), label});
    if (regions != nullptr) regions->push_back(region);
  }
  return out;
}

Grid region_footprint(const Region& region, int image_h, int image_w, int mask_h, int mask_w) {
  if (mask_h > image_h || mask_w > image_w) {
    throw std::invalid_argument("region_footprint: mask larger than image");
  }
  Grid fp(mask_h, mask_w, 1);
  for (int y = 0; y < mask_h; ++y) {
    if (!basis_touches(y, mask_h, image_h, region.top, region.top + region.height - 1)) continue;
    for (int x = 0; x < mask_w; ++x) {
      if (basis_touches(x, mask_w, image_w, region.left, region.left + region.width - 1)) {
        fp.at(0, y, x) = 1.0;
      }
    }
  }
  return fp;
}

double deletion_mass_inside(const Grid& mask, const Grid& footprint) {
  if (!mask.same_shape(footprint)) throw std::invalid_argument("deletion_mass_inside: shape mismatch");
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double d = 1.0 - mask[i];
    total += d;
    if (footprint[i] > 0.0) inside += d;
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace maskforge
