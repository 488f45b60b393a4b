#pragma once

#include <cstdint>
#include <string_view>

#include "maskforge/grid.hpp"

namespace maskforge {

enum class BaselineKind { blur, constant, noise };

std::string_view to_string(BaselineKind kind);
BaselineKind baseline_kind_from_string(std::string_view name);

/// Reference image carrying (close to) no class evidence. Only the field that
/// belongs to `kind` is read.
struct BaselineSpec {
  BaselineKind kind = BaselineKind::blur;
  double blur_sigma = 10.0;
  double constant_value = 0.0;
  double noise_sigma = 0.2;

  friend bool operator==(const BaselineSpec&, const BaselineSpec&) = default;
};

/// blur: gaussian_blur(image, blur_sigma); constant: every value
/// constant_value; noise: i.i.d. normal(0.5, noise_sigma) clamped to [0, 1].
Grid make_baseline(const Grid& image, const BaselineSpec& spec, std::uint64_t seed);

/// image * M + baseline * (1 - M) with the mask upsampled bilinearly to the
/// image plane and broadcast over channels. Mask values must lie in [0, 1].
Grid apply_mask(const Grid& image, const Grid& baseline, const Grid& mask);

/// Same blend with a mask that is already at image resolution; no range check.
Grid blend(const Grid& image, const Grid& baseline, const Grid& full_res_mask);

/// Adds i.i.d. normal(0, noise_sigma) and clamps to [0, 1]. noise_sigma == 0
/// returns the input unchanged.
Grid perturb_with_noise(const Grid& image, double noise_sigma, std::uint64_t seed);

}  // namespace maskforge
