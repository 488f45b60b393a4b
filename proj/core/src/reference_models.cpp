#include "maskforge/reference_models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace maskforge {
namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_positive_shape(const InputShape& shape) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
    throw std::invalid_argument("model input shape must be positive");
  }
}

}  // namespace

PlantedRegionModel::PlantedRegionModel(InputShape shape, Region region, double sharpness)
    : shape_(shape), region_(region), sharpness_(sharpness) {
  require_positive_shape(shape);
  if (region.height <= 0 || region.width <= 0 || region.top < 0 || region.left < 0 ||
      region.top + region.height > shape.height || region.left + region.width > shape.width) {
    throw std::invalid_argument("PlantedRegionModel: region outside the image");
  }
  if (!std::isfinite(sharpness) || sharpness <= 0.0) {
    throw std::invalid_argument("PlantedRegionModel: sharpness must be positive");
  }
}

double PlantedRegionModel::region_mean(const Grid& image) const {
  double acc = 0.0;
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = region_.top; y < region_.top + region_.height; ++y) {
      for (int x = region_.left; x < region_.left + region_.width; ++x) acc += image.at(c, y, x);
    }
  }
  return acc / (static_cast<double>(region_.area()) * image.channels());
}

double PlantedRegionModel::do_score(const Grid& image, int class_id) const {
  const double z = sharpness_ * (region_mean(image) - 0.5);
  return class_id == 0 ? sigmoid(z) : sigmoid(-z);
}

Grid PlantedRegionModel::do_input_gradient(const Grid& image, int class_id) const {
  const double z = sharpness_ * (region_mean(image) - 0.5);
  const double p = sigmoid(z);
  const double q = sigmoid(-z);
  const double count = static_cast<double>(region_.area()) * image.channels();
  const double g = (class_id == 0 ? 1.0 : -1.0) * sharpness_ * p * q / count;

  Grid out(image.height(), image.width(), image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = region_.top; y < region_.top + region_.height; ++y) {
      for (int x = region_.left; x < region_.left + region_.width; ++x) out.at(c, y, x) = g;
    }
  }
  return out;
}

LinearSoftmaxModel::LinearSoftmaxModel(std::vector<Grid> weights, std::vector<double> biases)
    : weights_(std::move(weights)), biases_(std::move(biases)) {
  if (weights_.empty()) throw std::invalid_argument("LinearSoftmaxModel: no classes");
  if (biases_.size() != weights_.size()) {
    throw std::invalid_argument("LinearSoftmaxModel: one bias per class required");
  }
  for (const Grid& w : weights_) {
    if (!w.same_shape(weights_.front())) {
      throw std::invalid_argument("LinearSoftmaxModel: class weights differ in shape");
    }
  }
}

LinearSoftmaxModel LinearSoftmaxModel::random(InputShape shape, int num_classes,
                                              double weight_scale, std::uint64_t seed) {
  require_positive_shape(shape);
  if (num_classes <= 0) throw std::invalid_argument("LinearSoftmaxModel: no classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, weight_scale);
  std::vector<Grid> weights;
  for (int c = 0; c < num_classes; ++c) {
    Grid w(shape.height, shape.width, shape.channels);
    for (double& v : w.values()) v = normal(rng);
    weights.push_back(std::move(w));
  }
  return LinearSoftmaxModel(std::move(weights),
                            std::vector<double>(static_cast<std::size_t>(num_classes), 0.0));
}

InputShape LinearSoftmaxModel::input_shape() const {
  const Grid& w = weights_.front();
  return {w.height(), w.width(), w.channels()};
}

std::vector<double> LinearSoftmaxModel::probabilities(const Grid& image) const {
  std::vector<double> logits(weights_.size());
  for (std::size_t c = 0; c < weights_.size(); ++c) logits[c] = dot(weights_[c], image) + biases_[c];
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - peak);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

double LinearSoftmaxModel::do_score(const Grid& image, int class_id) const {
  return probabilities(image)[static_cast<std::size_t>(class_id)];
}

Grid LinearSoftmaxModel::do_input_gradient(const Grid& image, int class_id) const {
  // d p_c / d x = p_c * (w_c - sum_k p_k w_k)
  const auto p = probabilities(image);
  const double pc = p[static_cast<std::size_t>(class_id)];
  Grid grad = weights_[static_cast<std::size_t>(class_id)];
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const auto wk = weights_[k].values();
    auto g = grad.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= p[k] * wk[i];
  }
  grad *= pc;
  return grad;
}

ConstantModel::ConstantModel(InputShape shape, double value, int num_classes)
    : shape_(shape), value_(value), classes_(num_classes) {
  require_positive_shape(shape);
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::invalid_argument("ConstantModel: value must lie in [0, 1]");
  }
  if (num_classes <= 0) throw std::invalid_argument("ConstantModel: no classes");
}

double ConstantModel::do_score(const Grid&, int) const { return value_; }

Grid ConstantModel::do_input_gradient(const Grid& image, int) const {
  return Grid(image.height(), image.width(), image.channels());
}

}  // namespace maskforge
