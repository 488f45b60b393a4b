#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "image_io.hpp"
#include "json.hpp"
#include "maskforge/bridge.hpp"
#include "maskforge/metrics.hpp"
#include "maskforge/optimizer.hpp"
#include "maskforge/presets.hpp"
#include "maskforge/reference_models.hpp"
#include "maskforge/synthetic.hpp"

namespace maskforge::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kHeatmapNote =
    "heatmap PNG maps mask value 0 to black (most salient); the CSV holds the raw mask";

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("invalid " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

InputShape parse_shape(std::string_view text) {
  const auto parts = split(text, 'x');
  if (parts.size() != 2 && parts.size() != 3) throw UsageError("shape must look like HxW or HxWxC");
  InputShape s{parse_number<int>(parts[0], "height"), parse_number<int>(parts[1], "width"),
               parts.size() == 3 ? parse_number<int>(parts[2], "channels") : 1};
  if (s.height <= 0 || s.width <= 0 || s.channels <= 0) throw UsageError("shape entries must be positive");
  return s;
}

InputShape shape_of(const Grid& g) { return {g.height(), g.width(), g.channels()}; }

std::string shape_text(InputShape s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

// Mask resolution: "full" (image size), "N" (square) or "HxW".
std::pair<int, int> parse_resolution(std::string_view text, InputShape image) {
  if (text == "full") return {image.height, image.width};
  if (text.find('x') != std::string_view::npos) {
    const InputShape s = parse_shape(text);
    return {s.height, s.width};
  }
  const int n = parse_number<int>(text, "resolution");
  if (n <= 0) throw UsageError("resolution must be positive");
  return {n, n};
}

std::string resolution_label(std::string_view text) {
  std::string out(text);
  return out;
}

std::unique_ptr<ScoreModel> make_tinyconv(InputShape shape, std::uint64_t seed) {
  if (shape.channels != 1) throw UsageError("builtin:tinyconv explains single-channel images only");
  TrainingConfig tc;
  tc.seed = seed;
  const auto data = make_texture_dataset(64, 28, 28, seed);
  const TinyConvNetModel trained = train_tiny_convnet(data, tc);
  return std::make_unique<TinyConvNetModel>(shape, trained.weights());
}

// Optional settings shared by explain and ablate; unset flags leave the
// config untouched.
struct Overrides {
  std::optional<std::string> variant;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<int> iterations;
  std::optional<int> steps;
  std::optional<double> noise;
  std::optional<double> alpha_init;
  std::optional<std::string> smoothness;
  std::optional<std::string> normalization;
  std::optional<std::string> baseline;
  std::optional<double> blur_sigma;
  std::optional<std::uint64_t> seed;
  bool fixed_step = false;

  void add_to(CLI::App& app) {
    app.add_option("--variant", variant, "igos_pp | igos_deletion_only | insertion_only | naive_combined");
    app.add_option("--lambda1", lambda1, "mask size penalty weight");
    app.add_option("--lambda2", lambda2, "smoothness penalty weight");
    app.add_option("--iterations", iterations, "optimizer iterations");
    app.add_option("--steps", steps, "integrated-gradient steps S");
    app.add_option("--noise", noise, "IG noise sigma");
    app.add_option("--alpha-init", alpha_init, "first line-search step");
    app.add_option("--smoothness", smoothness, "tv | btv");
    app.add_option("--normalization", normalization, "sum | mean");
    app.add_option("--baseline", baseline, "blur | constant | noise");
    app.add_option("--blur-sigma", blur_sigma, "baseline blur sigma in pixels");
    app.add_option("--seed", seed, "master seed (overrides MASKFORGE_SEED)");
    app.add_flag("--fixed-step", fixed_step, "skip the line search");
  }

  void apply(OptimizerConfig& cfg) const {
    if (variant) cfg.variant = variant_from_string(*variant);
    if (lambda1) cfg.reg.lambda1 = *lambda1;
    if (lambda2) cfg.reg.lambda2 = *lambda2;
    if (iterations) cfg.iterations = *iterations;
    if (steps) cfg.ig.steps = *steps;
    if (noise) cfg.ig.noise_sigma = *noise;
    if (alpha_init) cfg.line_search.alpha_init = *alpha_init;
    if (smoothness) cfg.reg.smoothness = smoothness_kind_from_string(*smoothness);
    if (normalization) cfg.reg.normalization = normalization_from_string(*normalization);
    if (baseline) cfg.baseline.kind = baseline_kind_from_string(*baseline);
    if (blur_sigma) cfg.baseline.blur_sigma = *blur_sigma;
    if (seed) cfg.seed = *seed;
    if (fixed_step) cfg.line_search.fixed_step = true;
  }
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("MASKFORGE_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  return parse_number<std::uint64_t>(raw, "MASKFORGE_SEED");
}

// Precedence, lowest first: built-in defaults, preset, MASKFORGE_SEED,
// config file, command-line flags.
OptimizerConfig resolve_config(const std::string& preset_name, const std::optional<std::string>& resolution,
                               const std::optional<std::string>& config_file, const Overrides& flags,
                               InputShape image) {
  std::pair<int, int> res{std::min(28, image.height), std::min(28, image.width)};
  if (resolution) res = parse_resolution(*resolution, image);
  OptimizerConfig cfg = experiment_preset(preset_name, res.first, res.second).config;
  if (const auto s = env_seed()) cfg.seed = *s;
  if (config_file) cfg = config_from_json(io::read_text(*config_file), cfg);
  if (resolution) {
    cfg.mask_h = res.first;
    cfg.mask_w = res.second;
  }
  flags.apply(cfg);
  cfg.validate();
  if (cfg.mask_h > image.height || cfg.mask_w > image.width) {
    throw UsageError("mask resolution " + std::to_string(cfg.mask_h) + "x" + std::to_string(cfg.mask_w) +
                     " exceeds the image size " + shape_text(image));
  }
  return cfg;
}

int resolve_class(const std::string& text, const ScoreModel& model, const Grid& image) {
  if (text == "argmax") return argmax_class(model, image);
  const int c = parse_number<int>(text, "class id");
  if (c < 0 || c >= model.num_classes()) {
    throw UsageError("class id " + text + " outside [0, " + std::to_string(model.num_classes()) + ")");
  }
  return c;
}

void check_model_shape(const ScoreModel& model, const Grid& image) {
  if (model.input_shape() != shape_of(image)) {
    throw UsageError("image is " + shape_text(shape_of(image)) + " but the model expects " +
                     shape_text(model.input_shape()));
  }
}

Grid load_image(const std::string& path) { return io::read_image(path); }

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

json config_json(const OptimizerConfig& cfg) { return json::parse(config_to_json(cfg)); }

json trace_json(const HeatmapResult& r) {
  json iterations = json::array();
  for (const auto& rec : r.trace) {
    iterations.push_back({{"iteration", rec.iteration},
                          {"objective", rec.objective},
                          {"alpha", rec.alpha},
                          {"trials", rec.trials},
                          {"path_before", rec.path_before},
                          {"path_after", rec.path_after},
                          {"direction_norm_sq", rec.direction_norm_sq}});
  }
  return {{"class_id", r.class_id},
          {"initial_score", r.initial_score},
          {"initial_objective", r.initial_objective},
          {"low_confidence", r.low_confidence},
          {"iterations", std::move(iterations)}};
}

json trace_summary(const HeatmapResult& r) {
  int accepted = 0;
  for (const auto& rec : r.trace) accepted += rec.alpha > 0.0 ? 1 : 0;
  return {{"initial_score", r.initial_score},
          {"initial_objective", r.initial_objective},
          {"final_objective", r.trace.empty() ? r.initial_objective : r.trace.back().objective},
          {"iterations", r.trace.size()},
          {"accepted_steps", accepted},
          {"low_confidence", r.low_confidence},
          {"mask_xy_mean", r.mask_xy.mean()}};
}

Grid overlay(const Grid& image, const Grid& mask) {
  const Grid up = upsample_bilinear(mask, image.height(), image.width());
  Grid out(image.height(), image.width(), 3);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double a = 0.6 * std::clamp(1.0 - up.at(0, y, x), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double v = image.at(image.channels() == 3 ? c : 0, y, x);
        out.at(c, y, x) = (1.0 - a) * v + a * (c == 0 ? 1.0 : 0.0);
      }
    }
  }
  return out;
}

std::string curve_csv(const EvaluationCurve& curve) {
  std::ostringstream out;
  out << std::setprecision(17) << "fraction,confidence\n";
  for (const auto& p : curve.points) out << p.fraction << ',' << p.confidence << '\n';
  return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- explain

struct ExplainArgs {
  std::string image;
  std::string model;
  std::string class_id = "argmax";
  std::string preset = "igos_pp";
  std::optional<std::string> resolution;
  std::optional<std::string> config;
  std::string out_dir = ".";
  std::string prefix = "explain";
  Overrides overrides;
};

int cmd_explain(const ExplainArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Grid image = load_image(a.image);
  const auto model = make_model(a.model, shape_of(image));
  check_model_shape(*model, image);
  const OptimizerConfig cfg = resolve_config(a.preset, a.resolution, a.config, a.overrides, shape_of(image));
  const int class_id = resolve_class(a.class_id, *model, image);
  const Grid baseline = default_baseline(image, cfg);

  HeatmapResult result;
  try {
    result = optimize(*model, image, baseline, class_id, cfg);
  } catch (const OptimizationError& e) {
    throw ModelFailure(std::string(e.what()) + " after " + std::to_string(e.partial().trace.size()) +
                       " iterations");
  }

  const fs::path dir(a.out_dir);
  ensure_directory(dir);
  const fs::path mask_png = dir / (a.prefix + "_mask.png");
  const fs::path mask_csv = dir / (a.prefix + "_mask.csv");
  const fs::path overlay_png = dir / (a.prefix + "_overlay.png");
  const fs::path trace_path = dir / (a.prefix + "_trace.json");
  const fs::path manifest_path = dir / (a.prefix + "_manifest.json");

  io::write_png(mask_png, upsample_bilinear(result.mask_xy, image.height(), image.width()));
  io::write_heatmap_csv(mask_csv, result.mask_xy);
  io::write_png(overlay_png, overlay(image, result.mask_xy));
  io::write_text(trace_path, trace_json(result).dump(2) + "\n");

  const json manifest{
      {"manifest_version", 1},
      {"command", "explain"},
      {"config", config_json(cfg)},
      {"preset", a.preset},
      {"inputs", {{"image", a.image}}},
      {"model", a.model},
      {"class_id", class_id},
      {"class_selector", a.class_id},
      {"seed", cfg.seed},
      {"outputs",
       {{"mask_png", mask_png.string()},
        {"mask_csv", mask_csv.string()},
        {"overlay_png", overlay_png.string()},
        {"trace", trace_path.string()}}},
      {"heatmap_note", kHeatmapNote},
      {"summary", trace_summary(result)},
      {"duration_seconds", seconds_since(t0)},
  };
  io::write_text(manifest_path, manifest.dump(2) + "\n");

  out << "class " << class_id << "  initial score " << result.initial_score << "  objective "
      << result.initial_objective << " -> "
      << (result.trace.empty() ? result.initial_objective : result.trace.back().objective) << '\n';
  if (result.low_confidence) out << "warning: initial confidence below the low-confidence floor\n";
  out << "wrote " << mask_png.string() << ", " << mask_csv.string() << ", " << overlay_png.string() << ", "
      << trace_path.string() << ", " << manifest_path.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string image;
  std::string model;
  std::string heatmap;
  std::optional<std::string> orientation;
  std::string class_id = "argmax";
  std::string baseline = "blur";
  double blur_sigma = 10.0;
  double constant_value = 0.0;
  std::optional<int> pixels_per_step;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string prefix = "evaluate";
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (!a.orientation) {
    throw UsageError(
        "--orientation is required: heatmap files do not say which end marks importance. Use 'mask' "
        "when low values are important (explain output) or 'saliency' when high values are");
  }
  if (*a.orientation != "mask" && *a.orientation != "saliency") {
    throw UsageError("--orientation must be 'mask' or 'saliency'");
  }
  const Grid image = load_image(a.image);
  Grid heatmap = io::read_heatmap(a.heatmap);
  const auto model = make_model(a.model, shape_of(image));
  check_model_shape(*model, image);
  if (heatmap.height() > image.height() || heatmap.width() > image.width()) {
    throw UsageError("heatmap is larger than the image");
  }
  if (*a.orientation == "saliency") {
    const double top = heatmap.max();
    for (double& v : heatmap.values()) v = top - v;
  }
  const int class_id = resolve_class(a.class_id, *model, image);

  BaselineSpec spec;
  spec.kind = baseline_kind_from_string(a.baseline);
  spec.blur_sigma = a.blur_sigma;
  spec.constant_value = a.constant_value;
  std::uint64_t seed = 0;
  if (const auto s = env_seed()) seed = *s;
  if (a.seed) seed = *a.seed;
  OptimizerConfig seeded;
  seeded.baseline = spec;
  seeded.seed = seed;
  const Grid baseline = default_baseline(image, seeded);  // same baseline explain would use
  const int total = image.height() * image.width();
  const int pps = a.pixels_per_step.value_or(default_pixels_per_step(total));
  if (pps < 1) throw UsageError("--pixels-per-step must be >= 1");

  const EvaluationCurve del = deletion_curve(*model, image, heatmap, class_id, baseline, pps);
  const EvaluationCurve ins = insertion_curve(*model, image, heatmap, class_id, baseline, pps);

  const fs::path dir(a.out_dir);
  ensure_directory(dir);
  const fs::path del_path = dir / (a.prefix + "_deletion.csv");
  const fs::path ins_path = dir / (a.prefix + "_insertion.csv");
  const fs::path summary_path = dir / (a.prefix + "_summary.json");
  io::write_text(del_path, curve_csv(del));
  io::write_text(ins_path, curve_csv(ins));
  const json summary{
      {"command", "evaluate"},
      {"image", a.image},
      {"heatmap", a.heatmap},
      {"orientation", *a.orientation},
      {"model", a.model},
      {"class_id", class_id},
      {"pixels_per_step", pps},
      {"baseline",
       {{"kind", a.baseline}, {"blur_sigma", a.blur_sigma}, {"constant_value", a.constant_value}, {"seed", seed}}},
      {"deletion_auc", del.auc},
      {"insertion_auc", ins.auc},
      {"outputs", {{"deletion_curve", del_path.string()}, {"insertion_curve", ins_path.string()}}},
  };
  io::write_text(summary_path, summary.dump(2) + "\n");
  out << std::setprecision(6) << "deletion AUC " << del.auc << "  insertion AUC " << ins.auc << '\n';
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string images;
  std::string model;
  std::string presets = "igos_pp,igos";
  std::string resolutions = "full,28";
  std::string class_id = "argmax";
  std::optional<std::string> config;
  int jobs = 1;
  std::string out_dir = "ablation";
  Overrides overrides;
};

struct SuiteEntry {
  std::string model;
};

std::map<std::string, SuiteEntry> read_suite(const fs::path& dir) {
  const fs::path path = dir / "suite.json";
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::parse_error& e) {
    throw io::IoError("malformed '" + path.string() + "': " + e.what());
  }
  std::map<std::string, SuiteEntry> out;
  if (!j.contains("images") || !j["images"].is_array()) {
    throw io::IoError("'" + path.string() + "' lacks an images array");
  }
  for (const auto& e : j["images"]) {
    if (!e.contains("file") || !e.contains("model")) throw io::IoError("suite entry lacks file/model");
    out[e["file"].get<std::string>()] = {e["model"].get<std::string>()};
  }
  return out;
}

struct RunOutcome {
  bool ok = false;
  int exit_code = kOk;
  std::string error;
  double deletion_auc = 0.0;
  double insertion_auc = 0.0;
  double final_objective = 0.0;
};

int classify(const std::exception_ptr& ep, std::string& message) {
  try {
    std::rethrow_exception(ep);
  } catch (const io::IoError& e) {
    message = e.what();
    return kIoFailure;
  } catch (const UsageError& e) {
    message = e.what();
    return kUsage;
  } catch (const std::invalid_argument& e) {
    message = e.what();
    return kUsage;
  } catch (const std::exception& e) {
    message = e.what();
    return kModelFailure;
  }
}

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir(a.images);
  if (!fs::is_directory(dir)) throw UsageError("'" + a.images + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no PNG/PPM images in '" + a.images + "'");
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");

  const auto presets = split(a.presets, ',');
  const auto resolutions = split(a.resolutions, ',');
  for (const auto& p : presets) experiment_preset(p);  // rejects unknown names early
  std::map<std::string, SuiteEntry> suite;
  if (a.model == "suite") suite = read_suite(dir);

  const fs::path out_dir(a.out_dir);
  const fs::path runs_dir = out_dir / "runs";
  ensure_directory(runs_dir);

  struct Task {
    std::size_t preset;
    std::size_t resolution;
    std::size_t image;
  };
  std::vector<Task> tasks;
  for (std::size_t p = 0; p < presets.size(); ++p) {
    for (std::size_t r = 0; r < resolutions.size(); ++r) {
      for (std::size_t i = 0; i < files.size(); ++i) tasks.push_back({p, r, i});
    }
  }
  std::vector<RunOutcome> outcomes(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  const auto worker = [&] {
    std::map<std::string, std::unique_ptr<ScoreModel>> models;  // per worker, keyed by selector+shape
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      const Task& task = tasks[t];
      RunOutcome& o = outcomes[t];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const fs::path& file = files[task.image];
        const Grid image = load_image(file.string());
        std::string selector = a.model;
        if (a.model == "suite") {
          const auto it = suite.find(file.filename().string());
          if (it == suite.end()) throw UsageError("suite.json has no entry for " + file.filename().string());
          selector = it->second.model;
        }
        const std::string key = selector + "@" + shape_text(shape_of(image));
        auto& model = models[key];
        if (!model) model = make_model(selector, shape_of(image));
        check_model_shape(*model, image);
        const OptimizerConfig cfg = resolve_config(presets[task.preset], resolutions[task.resolution],
                                                   a.config, a.overrides, shape_of(image));
        const int class_id = a.model == "suite" && a.class_id == "argmax" ? 0 : resolve_class(a.class_id, *model, image);
        const Grid baseline = default_baseline(image, cfg);
        const HeatmapResult r = optimize(*model, image, baseline, class_id, cfg);
        const int pps = default_pixels_per_step(image.height() * image.width());
        o.deletion_auc = deletion_curve(*model, image, r.mask_xy, class_id, baseline, pps).auc;
        o.insertion_auc = insertion_curve(*model, image, r.mask_xy, class_id, baseline, pps).auc;
        o.final_objective = r.trace.empty() ? r.initial_objective : r.trace.back().objective;
        o.ok = true;

        const std::string stem = presets[task.preset] + "_" + resolutions[task.resolution] + "_" + file.stem().string();
        const fs::path mask_csv = runs_dir / (stem + "_mask.csv");
        io::write_heatmap_csv(mask_csv, r.mask_xy);
        const json manifest{
            {"manifest_version", 1},
            {"command", "ablate"},
            {"config", config_json(cfg)},
            {"preset", presets[task.preset]},
            {"inputs", {{"image", file.string()}}},
            {"model", selector},
            {"class_id", class_id},
            {"seed", cfg.seed},
            {"outputs", {{"mask_csv", mask_csv.string()}}},
            {"heatmap_note", kHeatmapNote},
            {"summary", trace_summary(r)},
            {"deletion_auc", o.deletion_auc},
            {"insertion_auc", o.insertion_auc},
            {"duration_seconds", seconds_since(t0)},
        };
        io::write_text(runs_dir / (stem + "_manifest.json"), manifest.dump(2) + "\n");
      } catch (...) {
        o.ok = false;
        o.exit_code = classify(std::current_exception(), o.error);
        std::lock_guard lock(log_mu);
        err << "run failed (" << presets[task.preset] << ", " << resolutions[task.resolution] << ", "
            << files[task.image].filename().string() << "): " << o.error << '\n';
      }
    }
  };

  std::vector<std::thread> pool;
  const int workers = std::min<int>(a.jobs, static_cast<int>(tasks.size()));
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::ostringstream runs_csv;
  runs_csv << std::setprecision(17) << "preset,resolution,image,deletion_auc,insertion_auc,final_objective,status\n";
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& o = outcomes[t];
    runs_csv << presets[tasks[t].preset] << ',' << resolutions[tasks[t].resolution] << ','
             << files[tasks[t].image].filename().string() << ',';
    if (o.ok) {
      runs_csv << o.deletion_auc << ',' << o.insertion_auc << ',' << o.final_objective << ",ok\n";
    } else {
      runs_csv << ",,,failed\n";
    }
  }
  io::write_text(out_dir / "ablation_runs.csv", runs_csv.str());

  std::ostringstream table;
  table << std::setprecision(6) << "preset";
  for (const auto& r : resolutions) table << ",deletion_auc_" << resolution_label(r) << ",insertion_auc_" << resolution_label(r);
  table << ",runs_ok,runs_failed\n";
  std::size_t failures = 0;
  for (std::size_t p = 0; p < presets.size(); ++p) {
    table << presets[p];
    std::size_t ok_count = 0;
    std::size_t failed = 0;
    for (std::size_t r = 0; r < resolutions.size(); ++r) {
      double del = 0.0;
      double ins = 0.0;
      std::size_t n = 0;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].preset != p || tasks[t].resolution != r) continue;
        if (outcomes[t].ok) {
          del += outcomes[t].deletion_auc;
          ins += outcomes[t].insertion_auc;
          ++n;
        } else {
          ++failed;
        }
      }
      ok_count += n;
      if (n > 0) {
        table << ',' << del / n << ',' << ins / n;
      } else {
        table << ",,";
      }
    }
    failures += failed;
    table << ',' << ok_count << ',' << failed << '\n';
  }
  io::write_text(out_dir / "ablation.csv", table.str());
  out << table.str();

  if (failures == tasks.size()) {
    err << "every run failed\n";
    return outcomes.front().exit_code;
  }
  return kOk;
}

// ---------------------------------------------------------------- bridge-check

struct BridgeCheckArgs {
  std::string endpoint;
  int timeout_ms = 30000;
  int class_id = 0;
  std::uint64_t seed = 0;
  double eps = 1e-3;
  double tolerance = 1e-2;
};

int cmd_bridge_check(const BridgeCheckArgs& a, std::ostream& out, std::ostream& err) {
  std::string step = "handshake";
  try {
    BridgeOptions opts;
    opts.timeout = std::chrono::milliseconds(a.timeout_ms);
    const auto model = bridge_client(a.endpoint, opts);
    const InputShape shape = model->input_shape();
    out << "handshake ok: " << shape_text(shape) << ", " << model->num_classes() << " classes\n";
    if (a.class_id < 0 || a.class_id >= model->num_classes()) {
      throw UsageError("--class " + std::to_string(a.class_id) + " outside the bridge's class range");
    }

    std::mt19937_64 rng(a.seed);
    std::uniform_real_distribution<double> unit(0.1, 0.9);
    Grid image(shape.height, shape.width, shape.channels);
    for (double& v : image.values()) v = unit(rng);

    step = "score";
    const double s = model->score(image, a.class_id);
    out << "score ok: " << std::setprecision(6) << s << '\n';

    step = "grad";
    const Grid g = model->input_gradient(image, a.class_id);
    out << "grad ok: " << g.size() << " values\n";

    step = "finite-difference";
    const double rel = check_gradient(*model, image, a.class_id, a.eps, 8, a.seed);
    out << "finite-difference check on 8 coordinates: max relative error " << std::setprecision(3) << rel << '\n';
    if (!(rel < a.tolerance)) {
      err << "FAIL finite-difference: relative error " << rel << " exceeds " << a.tolerance << '\n';
      return kModelFailure;
    }
  } catch (const BridgeError& e) {
    err << "FAIL " << step << ": " << e.what() << '\n';
    if (!e.raw_response().empty()) err << "payload: " << e.raw_response() << '\n';
    return kModelFailure;
  }
  out << "bridge check passed\n";
  return kOk;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string model;
  std::string shape = "28x28x1";
  std::optional<int> tcp_port;
  std::string host = "127.0.0.1";
  bool once = false;
};

int cmd_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.model.starts_with("bridge:")) throw UsageError("serve wraps built-in models only");
  std::shared_ptr<const ScoreModel> model = make_model(a.model, parse_shape(a.shape));
  const BridgeServer server(model);
  if (!a.tcp_port) {
    server.serve(std::cin, out);
    return kOk;
  }
  const TcpBridgeListener listener(*a.tcp_port, a.host);
  err << "listening on " << a.host << ':' << listener.port() << std::endl;
  do {
    listener.serve_one(server);
  } while (!a.once);
  return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out_dir;
  int count = 50;
  std::uint64_t seed = 42;
  int size = 56;
  int channels = 3;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw UsageError("--count must be >= 1");
  PlantedSceneOptions opts;
  opts.height = a.size;
  opts.width = a.size;
  opts.channels = a.channels;
  const auto scenes = make_planted_suite(a.count, opts, a.seed);
  const fs::path dir(a.out_dir);
  ensure_directory(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::ostringstream stem;
    stem << "scene_" << std::setw(3) << std::setfill('0') << i;
    const auto& s = scenes[i];
    io::write_png(dir / (stem.str() + ".png"), s.image);
    Grid oracle = Grid::ones(a.size, a.size);
    for (int y = 0; y < a.size; ++y) {
      for (int x = 0; x < a.size; ++x) {
        if (s.region.contains(y, x)) oracle.at(0, y, x) = 0.0;
      }
    }
    io::write_heatmap_csv(dir / (stem.str() + "_oracle.csv"), oracle);
    const Region& r = s.region;
    std::ostringstream selector;
    selector << "builtin:planted:" << r.top << ',' << r.left << ',' << r.height << ',' << r.width << ','
             << kPlantedSharpness;
    entries.push_back({{"file", stem.str() + ".png"},
                       {"oracle", stem.str() + "_oracle.csv"},
                       {"region", {{"top", r.top}, {"left", r.left}, {"height", r.height}, {"width", r.width}}},
                       {"model", selector.str()}});
  }
  const json suite{{"generator", "maskforge synth"},
                   {"seed", a.seed},
                   {"size", a.size},
                   {"channels", a.channels},
                   {"sharpness", kPlantedSharpness},
                   {"images", std::move(entries)}};
  io::write_text(dir / "suite.json", suite.dump(2) + "\n");
  out << "wrote " << scenes.size() << " scenes and suite.json to " << dir.string() << '\n';
  return kOk;
}

}  // namespace

std::unique_ptr<ScoreModel> make_model(std::string_view selector, InputShape shape) {
  if (selector.starts_with("bridge:")) {
    try {
      return bridge_client(selector.substr(7));
    } catch (const BridgeError& e) {
      throw ModelFailure(std::string("cannot reach bridge: ") + e.what() +
                         (e.raw_response().empty() ? "" : " (payload: " + e.raw_response() + ")"));
    }
  }
  if (!selector.starts_with("builtin:")) {
    throw UsageError("unknown model selector '" + std::string(selector) +
                     "' (expected builtin:planted|linear|constant|tinyconv or bridge:<endpoint>)");
  }
  const auto parts = split(selector.substr(8), ':');
  const std::string& name = parts[0];
  const std::string arg = parts.size() > 1 ? parts[1] : "";
  if (parts.size() > 2) throw UsageError("too many ':' fields in model selector '" + std::string(selector) + "'");
  if (name == "planted") {
    const auto f = split(arg, ',');
    if (f.size() != 4 && f.size() != 5) {
      throw UsageError("builtin:planted needs TOP,LEFT,HEIGHT,WIDTH[,SHARPNESS]");
    }
    const Region region{parse_number<int>(f[0], "region top"), parse_number<int>(f[1], "region left"),
                        parse_number<int>(f[2], "region height"), parse_number<int>(f[3], "region width")};
    const double sharpness = f.size() == 5 ? parse_number<double>(f[4], "sharpness") : kPlantedSharpness;
    return std::make_unique<PlantedRegionModel>(shape, region, sharpness);
  }
  if (name == "linear") {
    const std::uint64_t seed = arg.empty() ? 0 : parse_number<std::uint64_t>(arg, "seed");
    const double n = static_cast<double>(shape.height) * shape.width * shape.channels;
    return std::make_unique<LinearSoftmaxModel>(LinearSoftmaxModel::random(shape, 3, 2.0 / std::sqrt(n), seed));
  }
  if (name == "constant") {
    const double value = arg.empty() ? 0.5 : parse_number<double>(arg, "constant score");
    return std::make_unique<ConstantModel>(shape, value);
  }
  if (name == "tinyconv") {
    return make_tinyconv(shape, arg.empty() ? 0 : parse_number<std::uint64_t>(arg, "seed"));
  }
  throw UsageError("unknown builtin model '" + name + "' (expected planted, linear, constant or tinyconv)");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"maskforge: saliency masks for black-box classifiers", "maskforge"};
  app.require_subcommand(1);

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "optimize a saliency mask for one image");
  explain->add_option("--image", ex.image, "input PNG/PPM")->required();
  explain->add_option("--model", ex.model, "model selector")->required();
  explain->add_option("--class", ex.class_id, "class id or 'argmax'");
  explain->add_option("--preset", ex.preset, "configuration preset");
  explain->add_option("--resolution", ex.resolution, "mask resolution: N, HxW or full");
  explain->add_option("--config", ex.config, "JSON config or manifest");
  explain->add_option("--out", ex.out_dir, "output directory");
  explain->add_option("--prefix", ex.prefix, "output file prefix");
  ex.overrides.add_to(*explain);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "deletion/insertion curves for a heatmap");
  evaluate->add_option("--image", ev.image, "input PNG/PPM")->required();
  evaluate->add_option("--model", ev.model, "model selector")->required();
  evaluate->add_option("--heatmap", ev.heatmap, "heatmap CSV or grayscale PNG")->required();
  evaluate->add_option("--orientation", ev.orientation, "mask (low = important) or saliency (high = important)");
  evaluate->add_option("--class", ev.class_id, "class id or 'argmax'");
  evaluate->add_option("--baseline", ev.baseline, "blur | constant | noise");
  evaluate->add_option("--blur-sigma", ev.blur_sigma, "baseline blur sigma");
  evaluate->add_option("--constant-value", ev.constant_value, "constant baseline value");
  evaluate->add_option("--pixels-per-step", ev.pixels_per_step, "pixels swapped per curve step");
  evaluate->add_option("--seed", ev.seed, "seed for noise baselines");
  evaluate->add_option("--out", ev.out_dir, "output directory");
  evaluate->add_option("--prefix", ev.prefix, "output file prefix");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "run presets over a directory of images");
  ablate->add_option("--images", ab.images, "image directory")->required();
  ablate->add_option("--model", ab.model, "model selector, or 'suite' to read suite.json")->required();
  ablate->add_option("--presets", ab.presets, "comma-separated preset names");
  ablate->add_option("--resolutions", ab.resolutions, "comma-separated mask resolutions");
  ablate->add_option("--class", ab.class_id, "class id or 'argmax'");
  ablate->add_option("--config", ab.config, "JSON config applied to every preset");
  ablate->add_option("--jobs", ab.jobs, "parallel workers");
  ablate->add_option("--out", ab.out_dir, "output directory");
  ab.overrides.add_to(*ablate);

  BridgeCheckArgs bc;
  auto* bridge_check = app.add_subcommand("bridge-check", "health-check a model bridge");
  bridge_check->add_option("--endpoint", bc.endpoint, "stdio:<command> or tcp:<host>:<port>")->required();
  bridge_check->add_option("--timeout-ms", bc.timeout_ms, "per-request timeout");
  bridge_check->add_option("--class", bc.class_id, "class to probe");
  bridge_check->add_option("--seed", bc.seed, "probe image seed");
  bridge_check->add_option("--eps", bc.eps, "finite-difference step");
  bridge_check->add_option("--tolerance", bc.tolerance, "largest accepted relative error");

  ServeArgs sv;
  auto* serve = app.add_subcommand("serve", "serve a built-in model over the bridge protocol");
  serve->add_option("--model", sv.model, "builtin model selector")->required();
  serve->add_option("--shape", sv.shape, "input shape HxWxC");
  serve->add_option("--tcp", sv.tcp_port, "listen on this TCP port instead of stdio (0 = any)");
  serve->add_option("--host", sv.host, "TCP listen address");
  serve->add_flag("--once", sv.once, "exit after the first TCP client disconnects");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "write a synthetic planted-region suite");
  synth->add_option("--out", sy.out_dir, "output directory")->required();
  synth->add_option("--count", sy.count, "number of images");
  synth->add_option("--seed", sy.seed, "suite seed");
  synth->add_option("--size", sy.size, "image height and width");
  synth->add_option("--channels", sy.channels, "image channels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*explain) return cmd_explain(ex, out);
    if (*evaluate) return cmd_evaluate(ev, out);
    if (*ablate) return cmd_ablate(ab, out, err);
    if (*bridge_check) return cmd_bridge_check(bc, out, err);
    if (*serve) return cmd_serve(sv, out, err);
    if (*synth) return cmd_synth(sy, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const io::IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const ModelFailure& e) {
    err << "model error: " << e.what() << '\n';
    return kModelFailure;
  } catch (const BridgeError& e) {
    err << "bridge error: " << e.what() << '\n';
    if (!e.raw_response().empty()) err << "payload: " << e.raw_response() << '\n';
    return kModelFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kUsage;
}

}  // namespace maskforge::cli
