#include <gtest/gtest.h>

#include <cmath>

#include "maskforge/perturbation.hpp"
#include "maskforge/reference_models.hpp"
#include "oracles.hpp"

namespace maskforge {
namespace {

using testing::random_grid;

TEST(Baseline, ConstantZero) {
  BaselineSpec spec;
  spec.kind = BaselineKind::constant;
  spec.constant_value = 0.0;
  const Grid b = make_baseline(random_grid(5, 5, 3, 1), spec, 0);
  for (double v : b.values()) EXPECT_EQ(v, 0.0);
}

TEST(Baseline, BlurOfConstantImage) {
  const BaselineSpec spec;  // blur, sigma 10
  const Grid b = make_baseline(Grid(12, 9, 3, 0.37), spec, 0);
  for (double v : b.values()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Baseline, BlurDestroysPlantedEvidence) {
  // Bright square on a mid-dark background.
  const Region region{20, 20, 16, 16};
  Grid image(56, 56, 3, 0.35);
  for (int c = 0; c < 3; ++c) {
    for (int y = region.top; y < region.top + region.height; ++y) {
      for (int x = region.left; x < region.left + region.width; ++x) image.at(c, y, x) = 0.9;
    }
  }
  const PlantedRegionModel model({56, 56, 3}, region, 10.0);
  ASSERT_GT(model.score(image, 0), 0.95);
  const Grid blurred = make_baseline(image, BaselineSpec{}, 0);
  EXPECT_NEAR(model.score(blurred, 0), 0.5, 0.05);
}

TEST(Baseline, NoiseIsSeededAndClamped) {
  BaselineSpec spec;
  spec.kind = BaselineKind::noise;
  const Grid image(10, 10, 1);
  const Grid a = make_baseline(image, spec, 3);
  EXPECT_EQ(a, make_baseline(image, spec, 3));
  EXPECT_NE(a, make_baseline(image, spec, 4));
  EXPECT_TRUE(within_unit_interval(a));
}

TEST(Baseline, KindNames) {
  EXPECT_EQ(baseline_kind_from_string("blur"), BaselineKind::blur);
  EXPECT_EQ(to_string(BaselineKind::noise), "noise");
  EXPECT_THROW(baseline_kind_from_string("fog"), std::invalid_argument);
}

TEST(ApplyMask, OnesZerosAndHalf) {
  const Grid image = random_grid(6, 6, 3, 1);
  const Grid baseline = random_grid(6, 6, 3, 2);
  EXPECT_EQ(apply_mask(image, baseline, Grid::ones(3, 3)), image);
  EXPECT_EQ(apply_mask(image, baseline, Grid(3, 3)), baseline);
  const Grid half = apply_mask(image, baseline, Grid(3, 3, 1, 0.5));
  for (std::size_t i = 0; i < image.size(); ++i) EXPECT_NEAR(half[i], (image[i] + baseline[i]) / 2.0, 1e-15);
}

TEST(ApplyMask, MatchesHandBlendWithUpsampledMask) {
  const Grid image = random_grid(5, 7, 2, 3);
  const Grid baseline = random_grid(5, 7, 2, 4);
  const Grid mask = random_grid(2, 3, 1, 5);
  const Grid up = upsample_bilinear(mask, 5, 7);
  const Grid out = apply_mask(image, baseline, mask);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 7; ++x) {
        const double m = up.at(0, y, x);
        EXPECT_NEAR(out.at(c, y, x), image.at(c, y, x) * m + baseline.at(c, y, x) * (1.0 - m), 1e-15);
      }
    }
  }
}

TEST(ApplyMask, RejectsOutOfRangeMask) {
  const Grid image(4, 4);
  EXPECT_THROW(apply_mask(image, image, Grid(2, 2, 1, 1.5)), std::invalid_argument);
  EXPECT_THROW(apply_mask(image, Grid(4, 4, 3), Grid(2, 2)), std::invalid_argument);
}

TEST(Noise, ZeroSigmaIsIdentity) {
  const Grid g = random_grid(4, 4, 1, 1);
  EXPECT_EQ(perturb_with_noise(g, 0.0, 7), g);
}

TEST(Noise, SeededDeterminism) {
  const Grid g = random_grid(8, 8, 3, 1);
  EXPECT_EQ(perturb_with_noise(g, 0.1, 99), perturb_with_noise(g, 0.1, 99));
}

TEST(Noise, EmpiricalStd) {
  // Mid-grey input keeps clamping out of play at sigma 0.1.
  const Grid g(100, 100, 1, 0.5);
  const Grid n = perturb_with_noise(g, 0.1, 1234);
  double mean = 0.0;
  for (double v : n.values()) mean += v - 0.5;
  mean /= static_cast<double>(n.size());
  double var = 0.0;
  for (double v : n.values()) var += (v - 0.5 - mean) * (v - 0.5 - mean);
  const double sd = std::sqrt(var / static_cast<double>(n.size() - 1));
  EXPECT_GE(sd, 0.08);
  EXPECT_LE(sd, 0.12);
}

}  // namespace
}  // namespace maskforge
