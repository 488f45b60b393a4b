#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace maskforge {

/// Dense planar grid of doubles (channel-major, then row-major).
///
/// Images, masks and gradients all live in a Grid. Masks are single-channel;
/// images carry one or three channels. Element (c, y, x) is stored at
/// `(c * height + y) * width + x`.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels = 1, double fill = 0.0);
  /// Takes ownership of `values`; throws std::invalid_argument when the
  /// length does not match or a value is not finite.
  Grid(int height, int width, int channels, std::vector<double> values);

  static Grid ones(int height, int width, int channels = 1) {
    return Grid(height, width, channels, 1.0);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool same_plane(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() & { return values_; }
  std::span<const double> values() const& { return values_; }
  // A span into a temporary would dangle.
  void values() && = delete;
  std::span<double> channel(int c) { return {values_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> channel(int c) const {
    return {values_.data() + c * plane_size(), plane_size()};
  }

  double min() const;
  double max() const;
  double sum() const;
  double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(size()); }

  Grid& operator+=(const Grid& rhs);
  Grid& operator-=(const Grid& rhs);
  /// Element-wise (Hadamard) product.
  Grid& operator*=(const Grid& rhs);
  Grid& operator*=(double s);

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

Grid operator+(Grid lhs, const Grid& rhs);
Grid operator-(Grid lhs, const Grid& rhs);
Grid operator*(Grid lhs, const Grid& rhs);
Grid operator*(Grid lhs, double s);
Grid operator*(double s, Grid rhs);

/// Sum of element-wise products; shapes must match.
double dot(const Grid& a, const Grid& b);

/// Largest absolute element-wise difference; shapes must match.
double max_abs_diff(const Grid& a, const Grid& b);

/// Sums a multi-channel grid into one channel.
Grid sum_channels(const Grid& g);

/// Channel mean, used as luminance.
Grid mean_channels(const Grid& g);

/// Repeats a single-channel grid across `channels`.
Grid broadcast_channels(const Grid& g, int channels);

/// Bilinear upsampling with the align-corners convention: output corner
/// samples coincide with input corner samples. Channels are resampled
/// independently. Throws std::invalid_argument on zero sizes or when a target
/// dimension is smaller than the source.
Grid upsample_bilinear(const Grid& src, int target_h, int target_w);

/// Transpose of upsample_bilinear: <upsample(a), b> == <a, upsample_adjoint(b)>.
Grid upsample_adjoint(const Grid& grad_highres, int h, int w);

/// Separable Gaussian blur, radius ceil(3 sigma), kernel normalized to one,
/// half-sample symmetric (reflective) borders. sigma == 0 returns a copy.
Grid gaussian_blur(const Grid& img, double sigma);

/// Clamps every value into [0, 1].
Grid project_unit_interval(Grid g);

bool within_unit_interval(const Grid& g);

/// Area-average pooling to a coarser grid. Output cell i covers the box
/// [i*H/h, (i+1)*H/h) of the source; partially covered pixels contribute by
/// overlap length. Target must not exceed the source.
Grid area_downsample(const Grid& src, int target_h, int target_w);

}  // namespace maskforge
