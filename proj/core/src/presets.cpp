#include "maskforge/presets.hpp"

#include <set>
#include <stdexcept>

#include "json.hpp"

namespace maskforge {
namespace {

using nlohmann::json;

json to_json_value(const OptimizerConfig& cfg) {
  return json{
      {"mask_h", cfg.mask_h},
      {"mask_w", cfg.mask_w},
      {"variant", std::string(to_string(cfg.variant))},
      {"iterations", cfg.iterations},
      {"seed", cfg.seed},
      {"low_confidence_floor", cfg.low_confidence_floor},
      {"record_masks", cfg.record_masks},
      {"reg",
       {{"lambda1", cfg.reg.lambda1},
        {"lambda2", cfg.reg.lambda2},
        {"smoothness", std::string(to_string(cfg.reg.smoothness))},
        {"tv_beta", cfg.reg.tv_beta},
        {"btv_sigma", cfg.reg.btv_sigma},
        {"normalization", std::string(to_string(cfg.reg.normalization))}}},
      {"ig", {{"steps", cfg.ig.steps}, {"noise_sigma", cfg.ig.noise_sigma}, {"seed", cfg.ig.seed}}},
      {"line_search",
       {{"alpha_init", cfg.line_search.alpha_init},
        {"shrink", cfg.line_search.shrink},
        {"armijo_beta", cfg.line_search.armijo_beta},
        {"max_trials", cfg.line_search.max_trials},
        {"fixed_step", cfg.line_search.fixed_step}}},
      {"baseline",
       {{"kind", std::string(to_string(cfg.baseline.kind))},
        {"blur_sigma", cfg.baseline.blur_sigma},
        {"constant_value", cfg.baseline.constant_value},
        {"noise_sigma", cfg.baseline.noise_sigma}}},
  };
}

// Reads obj[key] into out when present; `path` prefixes error messages.
template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: field '" + path + key + "' has the wrong type");
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& path) {
  if (!obj.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!known.contains(key)) throw std::invalid_argument("config: unknown field '" + path + key + "'");
  }
}

void overlay(const json& j, OptimizerConfig& cfg) {
  reject_unknown(j,
                 {"mask_h", "mask_w", "variant", "iterations", "seed", "low_confidence_floor",
                  "record_masks", "reg", "ig", "line_search", "baseline"},
                 "");
  read_field(j, "mask_h", cfg.mask_h, "");
  read_field(j, "mask_w", cfg.mask_w, "");
  if (j.contains("variant")) {
    std::string v;
    read_field(j, "variant", v, "");
    cfg.variant = variant_from_string(v);
  }
  read_field(j, "iterations", cfg.iterations, "");
  read_field(j, "seed", cfg.seed, "");
  read_field(j, "low_confidence_floor", cfg.low_confidence_floor, "");
  read_field(j, "record_masks", cfg.record_masks, "");

  if (const auto it = j.find("reg"); it != j.end()) {
    const json& r = *it;
    reject_unknown(r, {"lambda1", "lambda2", "smoothness", "tv_beta", "btv_sigma", "normalization"}, "reg.");
    read_field(r, "lambda1", cfg.reg.lambda1, "reg.");
    read_field(r, "lambda2", cfg.reg.lambda2, "reg.");
    read_field(r, "tv_beta", cfg.reg.tv_beta, "reg.");
    read_field(r, "btv_sigma", cfg.reg.btv_sigma, "reg.");
    if (r.contains("smoothness")) {
      std::string s;
      read_field(r, "smoothness", s, "reg.");
      cfg.reg.smoothness = smoothness_kind_from_string(s);
    }
    if (r.contains("normalization")) {
      std::string s;
      read_field(r, "normalization", s, "reg.");
      cfg.reg.normalization = normalization_from_string(s);
    }
  }
  if (const auto it = j.find("ig"); it != j.end()) {
    reject_unknown(*it, {"steps", "noise_sigma", "seed"}, "ig.");
    read_field(*it, "steps", cfg.ig.steps, "ig.");
    read_field(*it, "noise_sigma", cfg.ig.noise_sigma, "ig.");
    read_field(*it, "seed", cfg.ig.seed, "ig.");
  }
  if (const auto it = j.find("line_search"); it != j.end()) {
    reject_unknown(*it, {"alpha_init", "shrink", "armijo_beta", "max_trials", "fixed_step"}, "line_search.");
    read_field(*it, "alpha_init", cfg.line_search.alpha_init, "line_search.");
    read_field(*it, "shrink", cfg.line_search.shrink, "line_search.");
    read_field(*it, "armijo_beta", cfg.line_search.armijo_beta, "line_search.");
    read_field(*it, "max_trials", cfg.line_search.max_trials, "line_search.");
    read_field(*it, "fixed_step", cfg.line_search.fixed_step, "line_search.");
  }
  if (const auto it = j.find("baseline"); it != j.end()) {
    reject_unknown(*it, {"kind", "blur_sigma", "constant_value", "noise_sigma"}, "baseline.");
    if (it->contains("kind")) {
      std::string s;
      read_field(*it, "kind", s, "baseline.");
      cfg.baseline.kind = baseline_kind_from_string(s);
    }
    read_field(*it, "blur_sigma", cfg.baseline.blur_sigma, "baseline.");
    read_field(*it, "constant_value", cfg.baseline.constant_value, "baseline.");
    read_field(*it, "noise_sigma", cfg.baseline.noise_sigma, "baseline.");
  }
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"igos_pp", "igos",     "insertion_only", "naive_combined",
                                              "no_noise", "fixed_step", "no_btv"};
  return names;
}

double default_lambda1(int mask_h, int mask_w) { return (mask_h >= 224 && mask_w >= 224) ? 10.0 : 1.0; }

double default_alpha_init(int mask_h, int mask_w) {
  return 2000.0 * static_cast<double>(mask_h) * static_cast<double>(mask_w) / (28.0 * 28.0);
}

ExperimentPreset experiment_preset(std::string_view name, int mask_h, int mask_w) {
  OptimizerConfig cfg;
  cfg.mask_h = mask_h;
  cfg.mask_w = mask_w;
  cfg.reg.lambda1 = default_lambda1(mask_h, mask_w);
  cfg.reg.lambda2 = 20.0;
  cfg.line_search.alpha_init = default_alpha_init(mask_h, mask_w);

  ExperimentPreset p{std::string(name), cfg, ""};
  if (name == "igos_pp") {
    p.expected_direction = "reference row";
  } else if (name == "igos") {
    p.config.variant = Variant::igos_deletion_only;
    p.expected_direction = "lower insertion AUC than igos_pp";
  } else if (name == "insertion_only") {
    p.config.variant = Variant::insertion_only;
    p.expected_direction = "good insertion AUC, worse deletion AUC";
  } else if (name == "naive_combined") {
    p.config.variant = Variant::naive_combined;
    p.expected_direction = "worse deletion AUC and higher final objective than igos_pp";
  } else if (name == "no_noise") {
    p.config.ig.noise_sigma = 0.0;
    p.expected_direction = "worse at high resolution";
  } else if (name == "fixed_step") {
    p.config.line_search.fixed_step = true;
    p.expected_direction = "worse than adaptive step size";
  } else if (name == "no_btv") {
    p.config.reg.smoothness = SmoothnessKind::tv;
    p.expected_direction = "more scattered masks";
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + std::string(name) + "' (valid: " + valid + ")");
  }
  return p;
}

OptimizerConfig preset(std::string_view name, int mask_h, int mask_w) {
  return experiment_preset(name, mask_h, mask_w).config;
}

std::string config_to_json(const OptimizerConfig& cfg) { return to_json_value(cfg).dump(2); }

OptimizerConfig config_from_json(std::string_view text, const OptimizerConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("config") && j.contains("manifest_version")) j = j["config"];
  OptimizerConfig cfg = base;
  overlay(j, cfg);
  return cfg;
}

}  // namespace maskforge
