#pragma once

#include <cstdint>
#include <vector>

#include "maskforge/grid.hpp"
#include "maskforge/reference_models.hpp"

namespace maskforge {

/// An image with one bright rectangle on a darker, smoothly varying
/// background, plus the rectangle's location.
struct PlantedScene {
  Grid image;
  Region region;
};

struct PlantedSceneOptions {
  int height = 56;
  int width = 56;
  int channels = 3;
  double min_coverage = 0.05;
  double max_coverage = 0.15;
  double background_level = 0.3;
  double region_level = 0.9;
};

PlantedScene make_planted_scene(const PlantedSceneOptions& opts, std::uint64_t seed);

/// `count` scenes with independently drawn regions.
std::vector<PlantedScene> make_planted_suite(int count, const PlantedSceneOptions& opts,
                                             std::uint64_t seed);

/// Sharpness used with synthetic planted scenes.
inline constexpr double kPlantedSharpness = 10.0;

/// Two-class single-channel images: label 1 carries a fine checkerboard
/// texture over a large rectangle, label 0 the same rectangle untextured.
/// Both classes share the same mean intensity. Returns the texture
/// rectangles alongside when `regions` is non-null.
std::vector<LabeledImage> make_texture_dataset(int count, int height, int width,
                                               std::uint64_t seed,
                                               std::vector<Region>* regions = nullptr);

/// Mask cells whose bilinear basis function touches `region` when a
/// mask_h x mask_w mask is upsampled to image_h x image_w.
Grid region_footprint(const Region& region, int image_h, int image_w, int mask_h, int mask_w);

/// Fraction of sum(1 - mask) that falls inside the footprint; 0 when the
/// mask deletes nothing.
double deletion_mass_inside(const Grid& mask, const Grid& footprint);

}  // namespace maskforge
