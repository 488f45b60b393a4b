#pragma once

#include <cstdint>

#include "maskforge/grid.hpp"
#include "maskforge/model.hpp"

namespace maskforge {

struct IGConfig {
  int steps = 20;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const IGConfig&, const IGConfig&) = default;
};

/// Integrated gradient of the deletion score with respect to a (possibly
/// low-resolution) mask:
///
///   (1/S) sum_{s=1..S} d f_c(phi(image, baseline, (s/S) M)) / dM
///
/// Each term is input_gradient at the blended image (plus optional noise),
/// times (s/S)(image - baseline), summed over channels and pulled back to mask
/// resolution through upsample_adjoint. All S images go to the model in one
/// batch.
Grid ig_deletion(const ScoreModel& model, const Grid& image, const Grid& baseline,
                 const Grid& mask, int class_id, const IGConfig& cfg);

/// Negative integrated gradient along the insertion path, i.e.
/// -ig_deletion(model, baseline, image, mask): the path starts at the
/// inverse-masked image and ends at the original.
Grid ig_insertion(const ScoreModel& model, const Grid& image, const Grid& baseline,
                  const Grid& mask, int class_id, const IGConfig& cfg);

}  // namespace maskforge
