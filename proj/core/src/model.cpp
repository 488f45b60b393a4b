#include "maskforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace maskforge {

void ScoreModel::validate(const Grid& image, int class_id) const {
  const InputShape shape = input_shape();
  if (image.height() != shape.height || image.width() != shape.width ||
      image.channels() != shape.channels) {
    throw std::invalid_argument("model expects a " + std::to_string(shape.height) + "x" +
                                std::to_string(shape.width) + "x" + std::to_string(shape.channels) +
                                " image, got " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + "x" +
                                std::to_string(image.channels()));
  }
  if (class_id < 0 || class_id >= num_classes()) {
    throw std::invalid_argument("class id " + std::to_string(class_id) + " outside [0, " +
                                std::to_string(num_classes()) + ")");
  }
}

double ScoreModel::score(const Grid& image, int class_id) const {
  validate(image, class_id);
  return do_score(image, class_id);
}

Grid ScoreModel::input_gradient(const Grid& image, int class_id) const {
  validate(image, class_id);
  return do_input_gradient(image, class_id);
}

std::vector<double> ScoreModel::scores(std::span<const Grid> images, int class_id) const {
  for (const Grid& g : images) validate(g, class_id);
  if (images.empty()) return {};
  return do_scores(images, class_id);
}

std::vector<Grid> ScoreModel::input_gradients(std::span<const Grid> images, int class_id) const {
  for (const Grid& g : images) validate(g, class_id);
  if (images.empty()) return {};
  return do_input_gradients(images, class_id);
}

std::vector<double> ScoreModel::all_scores(const Grid& image) const {
  std::vector<double> out(static_cast<std::size_t>(num_classes()));
  for (int c = 0; c < num_classes(); ++c) out[static_cast<std::size_t>(c)] = score(image, c);
  return out;
}

std::vector<double> ScoreModel::do_scores(std::span<const Grid> images, int class_id) const {
  std::vector<double> out;
  out.reserve(images.size());
  for (const Grid& g : images) out.push_back(do_score(g, class_id));
  return out;
}

std::vector<Grid> ScoreModel::do_input_gradients(std::span<const Grid> images,
                                                 int class_id) const {
  std::vector<Grid> out;
  out.reserve(images.size());
  for (const Grid& g : images) out.push_back(do_input_gradient(g, class_id));
  return out;
}

int argmax_class(const ScoreModel& model, const Grid& image) {
  const auto all = model.all_scores(image);
  return static_cast<int>(std::max_element(all.begin(), all.end()) - all.begin());
}

double check_gradient(const ScoreModel& model, const Grid& image, int class_id, double eps,
                      int max_coordinates, std::uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("check_gradient: eps must be positive");
  const Grid analytic = model.input_gradient(image, class_id);

  std::vector<std::size_t> coords(image.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (static_cast<std::size_t>(max_coordinates) < coords.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(max_coordinates));
  }

  double worst = 0.0;
  Grid probe = image;
  for (std::size_t i : coords) {
    const double original = probe[i];
    probe[i] = original + eps;
    const double up = model.score(probe, class_id);
    probe[i] = original - eps;
    const double down = model.score(probe, class_id);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace maskforge
