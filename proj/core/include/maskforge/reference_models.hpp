#pragma once

#include <cstdint>
#include <vector>

#include "maskforge/grid.hpp"
#include "maskforge/model.hpp"

namespace maskforge {

/// Axis-aligned pixel rectangle.
struct Region {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  bool contains(int y, int x) const {
    return y >= top && y < top + height && x >= left && x < left + width;
  }
  int area() const { return height * width; }

  friend bool operator==(const Region&, const Region&) = default;
};

/// Two-class synthetic oracle with a known salient rectangle.
///
/// Class 0 scores sigmoid(sharpness * (mean(region) - 0.5)), where the mean
/// runs over every channel of every pixel inside the region. Class 1 is the
/// complement. Pixels outside the region have exactly zero gradient.
class PlantedRegionModel final : public ScoreModel {
 public:
  PlantedRegionModel(InputShape shape, Region region, double sharpness);

  InputShape input_shape() const override { return shape_; }
  int num_classes() const override { return 2; }
  const Region& region() const { return region_; }
  double sharpness() const { return sharpness_; }

 protected:
  double do_score(const Grid& image, int class_id) const override;
  Grid do_input_gradient(const Grid& image, int class_id) const override;

 private:
  double region_mean(const Grid& image) const;

  InputShape shape_;
  Region region_;
  double sharpness_;
};

/// Softmax over per-class linear logits <w_c, image> + b_c.
class LinearSoftmaxModel final : public ScoreModel {
 public:
  LinearSoftmaxModel(std::vector<Grid> weights, std::vector<double> biases);

  /// Weights i.i.d. normal(0, weight_scale), zero biases.
  static LinearSoftmaxModel random(InputShape shape, int num_classes, double weight_scale,
                                   std::uint64_t seed);

  InputShape input_shape() const override;
  int num_classes() const override { return static_cast<int>(weights_.size()); }
  const Grid& weight(int class_id) const { return weights_[static_cast<std::size_t>(class_id)]; }

  std::vector<double> probabilities(const Grid& image) const;

 protected:
  double do_score(const Grid& image, int class_id) const override;
  Grid do_input_gradient(const Grid& image, int class_id) const override;

 private:
  std::vector<Grid> weights_;
  std::vector<double> biases_;
};

/// Ignores its input. Every class scores `value`; the gradient is zero.
class ConstantModel final : public ScoreModel {
 public:
  ConstantModel(InputShape shape, double value, int num_classes = 2);

  InputShape input_shape() const override { return shape_; }
  int num_classes() const override { return classes_; }

 protected:
  double do_score(const Grid& image, int class_id) const override;
  Grid do_input_gradient(const Grid& image, int class_id) const override;

 private:
  InputShape shape_;
  double value_;
  int classes_;
};

/// Weights of a one-layer convolutional classifier:
/// conv (kernel_size x kernel_size, zero "same" padding) -> ReLU ->
/// global average pool -> linear head -> softmax.
struct TinyConvNetWeights {
  int in_channels = 1;
  int kernels = 4;
  int kernel_size = 3;
  int classes = 2;
  std::vector<double> conv;       // [kernels][in_channels][k][k]
  std::vector<double> conv_bias;  // [kernels]
  std::vector<double> head;       // [classes][kernels]
  std::vector<double> head_bias;  // [classes]

  static TinyConvNetWeights random(int in_channels, int kernels, int kernel_size, int classes,
                                   std::uint64_t seed);
  void validate() const;
};

/// Convolutional reference model with exact manual backprop. Global average
/// pooling makes it usable at any input size; the declared shape is fixed at
/// construction.
class TinyConvNetModel final : public ScoreModel {
 public:
  TinyConvNetModel(InputShape shape, TinyConvNetWeights weights);

  InputShape input_shape() const override { return shape_; }
  int num_classes() const override { return weights_.classes; }
  const TinyConvNetWeights& weights() const { return weights_; }

  std::vector<double> probabilities(const Grid& image) const;

  /// Smallest |pre-activation| over all ReLU units; finite differences with a
  /// step well below this distance never cross a kink.
  double min_abs_preactivation(const Grid& image) const;

 protected:
  double do_score(const Grid& image, int class_id) const override;
  Grid do_input_gradient(const Grid& image, int class_id) const override;

 private:
  InputShape shape_;
  TinyConvNetWeights weights_;
};

struct LabeledImage {
  Grid image;
  int label = 0;
};

struct TrainingConfig {
  int epochs = 300;
  double learning_rate = 0.5;
  int kernels = 4;
  int kernel_size = 3;
  std::uint64_t seed = 0;
};

struct TrainingReport {
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

/// Full-batch gradient descent on mean cross-entropy. All images must share
/// one shape; labels lie in [0, 2).
TinyConvNetModel train_tiny_convnet(const std::vector<LabeledImage>& data,
                                    const TrainingConfig& cfg, TrainingReport* report = nullptr);

}  // namespace maskforge
