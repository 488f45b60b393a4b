#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "maskforge/optimizer.hpp"

namespace maskforge {

/// A named optimizer configuration reproducing one ablation row.
struct ExperimentPreset {
  std::string name;
  OptimizerConfig config;
  /// Expected behaviour relative to igos_pp, for reports.
  std::string expected_direction;
};

/// igos_pp, igos, insertion_only, naive_combined, no_noise, fixed_step, no_btv.
const std::vector<std::string>& preset_names();

/// lambda1 = 10 for 224x224 (or larger) masks, 1 otherwise.
double default_lambda1(int mask_h, int mask_w);

/// First line-search step for a mask resolution: 2000 at 28x28, scaled with
/// the number of mask cells.
double default_alpha_init(int mask_h, int mask_w);

/// Resolves a preset at a mask resolution. Throws std::invalid_argument
/// listing the valid names when `name` is unknown.
ExperimentPreset experiment_preset(std::string_view name, int mask_h = 28, int mask_w = 28);

OptimizerConfig preset(std::string_view name, int mask_h = 28, int mask_w = 28);

/// Pretty-printed JSON with every field.
std::string config_to_json(const OptimizerConfig& cfg);

/// Overlays the fields present in `json` onto `base`. Unknown keys and
/// ill-typed values throw std::invalid_argument. A run manifest is accepted
/// too: its "config" member is used.
OptimizerConfig config_from_json(std::string_view json, const OptimizerConfig& base = {});

}  // namespace maskforge
