// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maskforge/integrated_gradients.hpp"
#include "maskforge/metrics.hpp"
#include "maskforge/optimizer.hpp"
#include "maskforge/presets.hpp"
#include "maskforge/reference_models.hpp"
#include "maskforge/regularizers.hpp"
#include "maskforge/synthetic.hpp"
#include "oracles.hpp"

namespace mf = maskforge;
namespace mft = maskforge::testing;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ------------------------------------------------------------------ suite

constexpr int kSuiteSize = 50;
constexpr std::uint64_t kSuiteSeed = 42;

struct SuiteRun {
  mf::HeatmapResult result;
  double deletion_auc = 0.0;
  double insertion_auc = 0.0;
  double joint = 0.0;  // final joint objective at (mask_x, mask_y)
};

struct SuiteImage {
  mf::PlantedScene scene;
  std::unique_ptr<mf::PlantedRegionModel> model;
  mf::Grid baseline;
  SuiteRun igos_pp;
  SuiteRun igos;
  SuiteRun naive;
};

// Optimizer runs on the planted suite, shared by several criteria.
class Suite {
 public:
  const std::vector<SuiteImage>& images() {
    if (images_.empty()) build();
    return images_;
  }
  double build_seconds() const { return build_seconds_; }

 private:
  void build() {
    const auto t0 = Clock::now();
    for (auto& scene : mf::make_planted_suite(kSuiteSize, mf::PlantedSceneOptions{}, kSuiteSeed)) {
      SuiteImage item;
      item.model = std::make_unique<mf::PlantedRegionModel>(mf::InputShape{56, 56, 3}, scene.region,
                                                            mf::kPlantedSharpness);
      item.scene = std::move(scene);
      mf::OptimizerConfig base = mf::preset("igos_pp");
      item.baseline = mf::default_baseline(item.scene.image, base);
      item.igos_pp = run(item, "igos_pp");
      item.igos = run(item, "igos");
      item.naive = run(item, "naive_combined");
      images_.push_back(std::move(item));
    }
    build_seconds_ = seconds(t0);
  }

  static SuiteRun run(const SuiteImage& item, const char* preset) {
    mf::OptimizerConfig cfg = mf::preset(preset);
    cfg.record_masks = true;
    SuiteRun out;
    out.result = mf::optimize(*item.model, item.scene.image, item.baseline, 0, cfg);
    const int pps = mf::default_pixels_per_step(56 * 56);
    out.deletion_auc = mf::deletion_curve(*item.model, item.scene.image, out.result.mask_xy, 0, item.baseline, pps).auc;
    out.insertion_auc =
        mf::insertion_curve(*item.model, item.scene.image, out.result.mask_xy, 0, item.baseline, pps).auc;
    const mf::MaskRegularizer reg(item.scene.image, cfg.mask_h, cfg.mask_w, cfg.reg);
    const mf::ExplanationProblem p{*item.model, item.scene.image, item.baseline, 0, reg};
    out.joint = mf::joint_objective(p, out.result.mask_x, out.result.mask_y);
    return out;
  }

  std::vector<SuiteImage> images_;
  double build_seconds_ = 0.0;
};

Suite& suite() {
  static Suite s;
  return s;
}

// ------------------------------------------------------------------ criteria

Verdict ig_closed_form() {
  const auto t0 = Clock::now();
  const mf::Grid w = mft::random_grid(12, 12, 3, 1, -1.0, 1.0);
  const mft::PureLinearScorer model(w, 0.1);
  const mf::Grid image = mft::random_grid(12, 12, 3, 2);
  const mf::Grid baseline = mft::random_grid(12, 12, 3, 3);
  const mf::Grid mask = mft::random_grid(12, 12, 1, 4);
  double worst = 0.0;
  for (int steps : {1, 5, 20}) {
    mf::IGConfig cfg;
    cfg.steps = steps;
    cfg.noise_sigma = 0.0;
    const mf::Grid expected = mf::sum_channels(w * (image - baseline)) * ((steps + 1.0) / (2.0 * steps));
    worst = std::max(worst, mft::relative_error(mf::ig_deletion(model, image, baseline, mask, 0, cfg), expected));
    worst = std::max(worst, mft::relative_error(mf::ig_insertion(model, image, baseline, mask, 0, cfg), expected));
  }
  const double secs = seconds(t0);
  return {worst < 1e-6 && secs < 1.0, "max relative error " + fmt(worst) + " over S in {1,5,20}, " + fmt(secs) + " s"};
}

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  const mf::Grid mask = mft::random_grid(7, 7, 1, 10, 0.05, 0.95);
  const mf::Grid image = mft::random_grid(14, 14, 3, 11);
  const double eps = 1e-6;

  const double e_l1 = mft::relative_error(
      mf::l1_deficit(mask).grad, mft::numeric_gradient([](const mf::Grid& m) { return mf::l1_deficit(m).value; }, mask, eps));
  const double e_tv = mft::relative_error(
      mf::tv(mask, 2.0).grad, mft::numeric_gradient([](const mf::Grid& m) { return mf::tv(m, 2.0).value; }, mask, eps));
  const double e_btv = mft::relative_error(
      mf::btv(mask, image, 2.0, 0.3).grad,
      mft::numeric_gradient([&](const mf::Grid& m) { return mf::btv(m, image, 2.0, 0.3).value; }, mask, eps));

  // Composite: noiseless total gradient of a random TinyConvNet against the
  // score-only path surrogate, at masks whose path images keep every ReLU
  // input well away from zero.
  const mf::TinyConvNetModel net({12, 12, 1}, mf::TinyConvNetWeights::random(1, 4, 3, 2, 19));
  const mf::Grid img = mft::random_grid(12, 12, 1, 15);
  const mf::Grid base = mf::gaussian_blur(img, 3.0);
  const mf::Grid x = mft::random_grid(6, 6, 1, 14, 0.2, 0.9);
  const mf::Grid y = mft::random_grid(6, 6, 1, 15, 0.2, 0.9);
  mf::RegularizerConfig reg;
  reg.btv_sigma = 0.3;
  const int steps = 5;
  double min_pre = 1e9;
  for (int s = 1; s <= steps; ++s) {
    const double t = double(s) / steps;
    for (const mf::Grid& m : {x, y, x * y}) {
      min_pre = std::min(min_pre, net.min_abs_preactivation(mf::apply_mask(img, base, m * t)));
      min_pre = std::min(min_pre, net.min_abs_preactivation(mf::apply_mask(base, img, m * t)));
    }
  }
  mf::IGConfig ig;
  ig.steps = steps;
  ig.noise_sigma = 0.0;
  const auto tg = mf::total_gradient(net, img, base, x, y, 0, reg, ig);
  const mft::PathSurrogate surrogate{net, img, base, 0, steps, reg};
  const double e_tg = std::max(
      mft::relative_error(tg.grad_x, mft::numeric_gradient([&](const mf::Grid& m) { return surrogate(m, y); }, x, eps)),
      mft::relative_error(tg.grad_y, mft::numeric_gradient([&](const mf::Grid& m) { return surrogate(x, m); }, y, eps)));

  const double secs = seconds(t0);
  const bool pass = e_l1 < 1e-4 && e_tv < 1e-4 && e_btv < 1e-4 && e_tg < 1e-3 && min_pre > 1e-4 && secs < 30.0;
  return {pass, "l1 " + fmt(e_l1, 2) + ", tv " + fmt(e_tv, 2) + ", btv " + fmt(e_btv, 2) + ", total " + fmt(e_tg, 2) +
                    " (min |ReLU input| " + fmt(min_pre, 2) + "), " + fmt(secs, 3) + " s"};
}

// Summed path objective, rebuilt from scores and the regularizer value.
double path_sum(const mf::ScoreModel& model, const mf::Grid& image, const mf::Grid& baseline,
                const mf::RegularizerConfig& reg, int steps, const mf::Grid& x, const mf::Grid& y) {
  const mf::Grid xy = x * y;
  double total = 0.0;
  for (int s = 1; s <= steps; ++s) {
    const double t = double(s) / steps;
    total += model.score(mf::apply_mask(image, baseline, x * t), 0);
    total += model.score(mf::apply_mask(image, baseline, xy * t), 0);
    total -= model.score(mf::apply_mask(baseline, image, y * t), 0);
    total -= model.score(mf::apply_mask(baseline, image, xy * t), 0);
    total += mf::g_total(xy * t, image, reg).value;
  }
  return total;
}

Verdict line_search_soundness() {
  const auto t0 = Clock::now();
  // 10 scenes x 20 iterations with noise off end to end; each accepted step
  // is re-derived from the masks recorded before it.
  const auto scenes = mf::make_planted_suite(10, mf::PlantedSceneOptions{}, 2024);
  int iterations = 0;
  int accepted = 0;
  int armijo_violations = 0;
  int monotone_violations = 0;
  int trace_mismatches = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    const mf::PlantedRegionModel model({56, 56, 3}, scene.region, mf::kPlantedSharpness);
    mf::OptimizerConfig cfg = mf::preset("no_noise", 14, 14);
    cfg.iterations = 20;
    cfg.record_masks = true;
    cfg.seed = i;
    const mf::Grid baseline = mf::default_baseline(scene.image, cfg);
    const mf::HeatmapResult r = mf::optimize(model, scene.image, baseline, 0, cfg);
    const mf::MaskRegularizer regularizer(scene.image, cfg.mask_h, cfg.mask_w, cfg.reg);
    const mf::ExplanationProblem p{model, scene.image, baseline, 0, regularizer};

    double previous = r.initial_objective;
    for (std::size_t k = 0; k < r.trace.size(); ++k) {
      ++iterations;
      const auto& rec = r.trace[k];
      if (rec.alpha > 0.0) {
        ++accepted;
        const auto& x = rec.mask_x_before;
        const auto& y = rec.mask_y_before;
        const auto tg = mf::total_gradient(p, x, y, cfg.ig);
        const mf::Grid dx = mf::project_direction(x, tg.grad_x);
        const mf::Grid dy = mf::project_direction(y, tg.grad_y);
        const double norm = mf::dot(dx, dx) + mf::dot(dy, dy);
        const mf::Grid cx = mf::project_unit_interval(x - dx * rec.alpha);
        const mf::Grid cy = mf::project_unit_interval(y - dy * rec.alpha);
        const double before = path_sum(model, scene.image, baseline, cfg.reg, cfg.ig.steps, x, y);
        const double after = path_sum(model, scene.image, baseline, cfg.reg, cfg.ig.steps, cx, cy);
        const double tol = 1e-9 * (1.0 + std::abs(before));
        if (after - before > -rec.alpha * cfg.line_search.armijo_beta * norm + tol) ++armijo_violations;
        if (std::abs(before - rec.path_before) > tol || std::abs(after - rec.path_after) > tol ||
            std::abs(norm - rec.direction_norm_sq) > 1e-9 * (1.0 + norm)) {
          ++trace_mismatches;
        }
        if (rec.objective > previous) ++monotone_violations;
      }
      previous = rec.objective;
    }
  }
  const double secs = seconds(t0);
  const bool pass = iterations >= 200 && accepted > 0 && armijo_violations == 0 && monotone_violations == 0 &&
                    trace_mismatches == 0 && secs < 120.0;
  return {pass, std::to_string(iterations) + " iterations, " + std::to_string(accepted) + " accepted, " +
                    std::to_string(armijo_violations) + " inequality violations, " +
                    std::to_string(monotone_violations) + " objective increases, " +
                    std::to_string(trace_mismatches) + " trace mismatches, " + fmt(secs, 3) + " s"};
}

Verdict feasibility() {
  int runs = 0;
  int states = 0;
  int bad = 0;
  const auto check = [&](const mf::HeatmapResult& r) {
    ++runs;
    for (const auto& rec : r.trace) {
      ++states;
      if (!mf::within_unit_interval(rec.mask_x_before) || !mf::within_unit_interval(rec.mask_y_before)) ++bad;
    }
    ++states;
    if (!mf::within_unit_interval(r.mask_x) || !mf::within_unit_interval(r.mask_y) ||
        !mf::within_unit_interval(r.mask_xy) || !(r.mask_xy == r.mask_x * r.mask_y)) {
      ++bad;
    }
  };
  for (const auto& item : suite().images()) {
    check(item.igos_pp.result);
    check(item.igos.result);
    check(item.naive.result);
  }
  // The remaining variants and step modes on a few scenes.
  for (const auto& scene : mf::make_planted_suite(3, mf::PlantedSceneOptions{}, 99)) {
    const mf::PlantedRegionModel model({56, 56, 3}, scene.region, mf::kPlantedSharpness);
    for (const char* name : {"insertion_only", "fixed_step", "no_btv", "no_noise"}) {
      mf::OptimizerConfig cfg = mf::preset(name);
      cfg.record_masks = true;
      check(mf::optimize(model, scene.image, 0, cfg));
    }
  }
  return {bad == 0, std::to_string(runs) + " runs, " + std::to_string(states) + " mask states, " +
                        std::to_string(bad) + " infeasible"};
}

Verdict constant_model_sanity() {
  const auto scene = mf::make_planted_scene(mf::PlantedSceneOptions{}, 5);
  double worst = 0.0;
  for (double value : {0.0, 0.5}) {
    const mf::ConstantModel model({56, 56, 3}, value);
    for (const char* name : {"igos_pp", "igos", "naive_combined"}) {
      const mf::HeatmapResult r = mf::optimize(model, scene.image, 0, mf::preset(name));
      worst = std::max(worst, mf::max_abs_diff(r.mask_xy, mf::Grid::ones(28, 28)));
    }
  }
  return {worst <= 1e-3, "max |mask_xy - 1| = " + fmt(worst, 3)};
}

constexpr double kLocalizationThreshold = 0.7;

Verdict localization() {
  const auto& items = suite().images();
  // Calibration: the exact region indicator, pooled to the mask grid.
  double oracle_min = 1.0;
  int hits = 0;
  double worst = 1.0;
  for (const auto& item : items) {
    const mf::Grid fp = mf::region_footprint(item.scene.region, 56, 56, 28, 28);
    mf::Grid indicator = mf::Grid::ones(56, 56);
    for (int y = 0; y < 56; ++y) {
      for (int x = 0; x < 56; ++x) {
        if (item.scene.region.contains(y, x)) indicator.at(0, y, x) = 0.0;
      }
    }
    oracle_min = std::min(oracle_min, mf::deletion_mass_inside(mf::area_downsample(indicator, 28, 28), fp));
    const double inside = mf::deletion_mass_inside(item.igos_pp.result.mask_xy, fp);
    worst = std::min(worst, inside);
    if (inside >= kLocalizationThreshold) ++hits;
  }
  const double rate = double(hits) / items.size();
  const bool pass = oracle_min >= kLocalizationThreshold && rate >= 0.9 && suite().build_seconds() < 600.0;
  return {pass, std::to_string(hits) + "/" + std::to_string(items.size()) + " images at >= " +
                    fmt(kLocalizationThreshold) + " (lowest " + fmt(worst, 3) + "); oracle heatmap minimum " +
                    fmt(oracle_min, 3) + "; suite built in " + fmt(suite().build_seconds(), 3) + " s"};
}

Verdict directional_orderings() {
  double ins_pp = 0.0;
  double ins_igos = 0.0;
  double del_pp = 0.0;
  double del_naive = 0.0;
  for (const auto& item : suite().images()) {
    ins_pp += item.igos_pp.insertion_auc;
    ins_igos += item.igos.insertion_auc;
    del_pp += item.igos_pp.deletion_auc;
    del_naive += item.naive.deletion_auc;
  }
  const double n = suite().images().size();
  ins_pp /= n;
  ins_igos /= n;
  del_pp /= n;
  del_naive /= n;
  return {ins_pp >= ins_igos && del_naive > del_pp,
          "insertion AUC igos_pp " + fmt(ins_pp) + " vs igos_deletion_only " + fmt(ins_igos) +
              "; deletion AUC naive_combined " + fmt(del_naive, 6) + " vs igos_pp " + fmt(del_pp, 6)};
}

Verdict objective_comparison() {
  int wins = 0;
  for (const auto& item : suite().images()) {
    if (item.igos_pp.joint <= item.naive.joint) ++wins;
  }
  const auto n = suite().images().size();
  return {wins >= 0.8 * n, "igos_pp final objective <= naive_combined on " + std::to_string(wins) + "/" +
                               std::to_string(n) + " images (lambda1 1, lambda2 20)"};
}

Verdict metric_oracle_separation() {
  const auto scenes = mf::make_planted_suite(10, mf::PlantedSceneOptions{}, 314);
  int separated = 0;
  double closest_del = 1e9;
  double closest_ins = 1e9;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i];
    const mf::PlantedRegionModel model({56, 56, 3}, scene.region, mf::kPlantedSharpness);
    const mf::Grid baseline = mf::make_baseline(scene.image, mf::BaselineSpec{}, 0);
    mf::Grid oracle = mf::Grid::ones(56, 56);
    for (int y = 0; y < 56; ++y) {
      for (int x = 0; x < 56; ++x) {
        if (scene.region.contains(y, x)) oracle.at(0, y, x) = 0.0;
      }
    }
    const int pps = mf::default_pixels_per_step(56 * 56);
    const double od = mf::deletion_curve(model, scene.image, oracle, 0, baseline, pps).auc;
    const double oi = mf::insertion_curve(model, scene.image, oracle, 0, baseline, pps).auc;
    bool ok = true;
    for (std::uint64_t r = 0; r < 20; ++r) {
      const mf::Grid heat = mft::random_grid(28, 28, 1, 1000 * (i + 1) + r);
      const double rd = mf::deletion_curve(model, scene.image, heat, 0, baseline, pps).auc;
      const double ri = mf::insertion_curve(model, scene.image, heat, 0, baseline, pps).auc;
      ok = ok && od < rd && oi > ri;
      closest_del = std::min(closest_del, rd - od);
      closest_ins = std::min(closest_ins, oi - ri);
    }
    if (ok) ++separated;
  }
  return {separated == static_cast<int>(scenes.size()),
          std::to_string(separated) + "/" + std::to_string(scenes.size()) +
              " scenes beat all 20 random heatmaps; smallest margins deletion " + fmt(closest_del, 3) +
              ", insertion " + fmt(closest_ins, 3)};
}

// Bound fixed from one reference run (measured 0.295); see README.
constexpr double kRandomizationBound = 0.2;

Verdict label_randomization() {
  const auto train = mf::make_texture_dataset(64, 28, 28, 1);
  mf::TrainingReport report;
  const mf::TinyConvNetModel trained = mf::train_tiny_convnet(train, mf::TrainingConfig{}, &report);
  const mf::ConstantModel constant({28, 28, 1}, 0.5);
  const auto test = mf::make_texture_dataset(16, 28, 28, 2);
  const mf::OptimizerConfig cfg = mf::preset("igos_pp", 14, 14);
  double total = 0.0;
  for (const auto& item : test) {
    const auto a = mf::optimize(trained, item.image, item.label, cfg);
    const auto b = mf::optimize(constant, item.image, item.label, cfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.mask_xy.size(); ++i) diff += std::abs(a.mask_xy[i] - b.mask_xy[i]);
    total += diff / a.mask_xy.size();
  }
  const double mean = total / test.size();
  return {mean > kRandomizationBound, "mean |M_trained - M_constant| = " + fmt(mean, 3) + " (bound " +
                                          fmt(kRandomizationBound) + ", train accuracy " +
                                          fmt(report.train_accuracy, 3) + ")"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"ig_closed_form", ig_closed_form},
      {"gradient_fidelity", gradient_fidelity},
      {"line_search_soundness", line_search_soundness},
      {"feasibility", feasibility},
      {"constant_model_sanity", constant_model_sanity},
      {"localization", localization},
      {"directional_orderings", directional_orderings},
      {"objective_comparison", objective_comparison},
      {"metric_oracle_separation", metric_oracle_separation},
      {"label_randomization", label_randomization},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
