#include "maskforge/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace maskforge {
namespace {

void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": grid shapes differ (" +
                                std::to_string(a.height()) + "x" + std::to_string(a.width()) + "x" +
                                std::to_string(a.channels()) + " vs " + std::to_string(b.height()) +
                                "x" + std::to_string(b.width()) + "x" +
                                std::to_string(b.channels()) + ")");
  }
}

// One output sample of a 1-D linear interpolation: value = (1-frac)*src[lo] + frac*src[hi].
struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> align_corners_taps(int src, int dst) {
  std::vector<Tap> taps(static_cast<std::size_t>(dst));
  if (src == 1 || dst == 1) {
    std::fill(taps.begin(), taps.end(), Tap{0, 0, 0.0});
    return taps;
  }
  const double scale = static_cast<double>(src - 1) / static_cast<double>(dst - 1);
  for (int i = 0; i < dst; ++i) {
    const double pos = i * scale;
    int lo = static_cast<int>(std::floor(pos));
    lo = std::clamp(lo, 0, src - 1);
    const int hi = std::min(lo + 1, src - 1);
    double frac = pos - lo;
    if (hi == lo) frac = 0.0;
    taps[static_cast<std::size_t>(i)] = {lo, hi, frac};
  }
  return taps;
}

void check_upsample_dims(int h, int w, int target_h, int target_w, const char* what) {
  if (h <= 0 || w <= 0 || target_h <= 0 || target_w <= 0) {
    throw std::invalid_argument(std::string(what) + ": dimensions must be positive");
  }
  if (target_h < h || target_w < w) {
    throw std::invalid_argument(std::string(what) + ": target " + std::to_string(target_h) + "x" +
                                std::to_string(target_w) + " is smaller than source " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
}

// Index into a half-sample symmetric periodic extension of [0, n).
int fold_index(int i, int n) {
  const int period = 2 * n;
  int r = i % period;
  if (r < 0) r += period;
  return r < n ? r : period - 1 - r;
}

// overlap[i] lists (source index, weight) for output cell i, weights summing to 1.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(dst));
  const double step = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * step;
    const double hi = (i + 1) * step;
    for (int p = static_cast<int>(std::floor(lo)); p < src && p < hi; ++p) {
      const double overlap = std::min(hi, p + 1.0) - std::max(lo, static_cast<double>(p));
      if (overlap > 0.0) out[static_cast<std::size_t>(i)].emplace_back(p, overlap / step);
    }
  }
  return out;
}

}  // namespace

Grid::Grid(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("Grid: dimensions must be positive");
  }
  values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Grid::Grid(int height, int width, int channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw std::invalid_argument("Grid: dimensions must be positive");
  }
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw std::invalid_argument("Grid: expected " +
                                std::to_string(static_cast<std::size_t>(height) * width * channels) +
                                " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("Grid: non-finite value");
  }
}

double Grid::min() const { return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end()); }
double Grid::max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }
double Grid::sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

Grid& Grid::operator+=(const Grid& rhs) {
  require_same_shape(*this, rhs, "operator+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += rhs.values_[i];
  return *this;
}

Grid& Grid::operator-=(const Grid& rhs) {
  require_same_shape(*this, rhs, "operator-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= rhs.values_[i];
  return *this;
}

Grid& Grid::operator*=(const Grid& rhs) {
  require_same_shape(*this, rhs, "operator*=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] *= rhs.values_[i];
  return *this;
}

Grid& Grid::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

Grid operator+(Grid lhs, const Grid& rhs) { return lhs += rhs; }
Grid operator-(Grid lhs, const Grid& rhs) { return lhs -= rhs; }
Grid operator*(Grid lhs, const Grid& rhs) { return lhs *= rhs; }
Grid operator*(Grid lhs, double s) { return lhs *= s; }
Grid operator*(double s, Grid rhs) { return rhs *= s; }

double dot(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_abs_diff(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Grid sum_channels(const Grid& g) {
  Grid out(g.height(), g.width(), 1);
  for (int c = 0; c < g.channels(); ++c) {
    const auto src = g.channel(c);
    auto dst = out.channel(0);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }
  return out;
}

Grid mean_channels(const Grid& g) { return sum_channels(g) * (1.0 / g.channels()); }

Grid broadcast_channels(const Grid& g, int channels) {
  if (g.channels() != 1) throw std::invalid_argument("broadcast_channels: expected one channel");
  Grid out(g.height(), g.width(), channels);
  for (int c = 0; c < channels; ++c) {
    std::copy(g.channel(0).begin(), g.channel(0).end(), out.channel(c).begin());
  }
  return out;
}

Grid upsample_bilinear(const Grid& src, int target_h, int target_w) {
  check_upsample_dims(src.height(), src.width(), target_h, target_w, "upsample_bilinear");
  if (src.height() == target_h && src.width() == target_w) return src;

  const auto rows = align_corners_taps(src.height(), target_h);
  const auto cols = align_corners_taps(src.width(), target_w);
  Grid out(target_h, target_w, src.channels());
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < target_h; ++y) {
      const Tap& r = rows[static_cast<std::size_t>(y)];
      for (int x = 0; x < target_w; ++x) {
        const Tap& q = cols[static_cast<std::size_t>(x)];
        const double top = (1.0 - q.frac) * src.at(c, r.lo, q.lo) + q.frac * src.at(c, r.lo, q.hi);
        const double bottom = (1.0 - q.frac) * src.at(c, r.hi, q.lo) + q.frac * src.at(c, r.hi, q.hi);
        out.at(c, y, x) = (1.0 - r.frac) * top + r.frac * bottom;
      }
    }
  }
  return out;
}

Grid upsample_adjoint(const Grid& grad_highres, int h, int w) {
  check_upsample_dims(h, w, grad_highres.height(), grad_highres.width(), "upsample_adjoint");
  if (grad_highres.height() == h && grad_highres.width() == w) return grad_highres;

  const auto rows = align_corners_taps(h, grad_highres.height());
  const auto cols = align_corners_taps(w, grad_highres.width());
  Grid out(h, w, grad_highres.channels());
  for (int c = 0; c < grad_highres.channels(); ++c) {
    for (int y = 0; y < grad_highres.height(); ++y) {
      const Tap& r = rows[static_cast<std::size_t>(y)];
      for (int x = 0; x < grad_highres.width(); ++x) {
        const Tap& q = cols[static_cast<std::size_t>(x)];
        const double g = grad_highres.at(c, y, x);
        out.at(c, r.lo, q.lo) += (1.0 - r.frac) * (1.0 - q.frac) * g;
        out.at(c, r.lo, q.hi) += (1.0 - r.frac) * q.frac * g;
        out.at(c, r.hi, q.lo) += r.frac * (1.0 - q.frac) * g;
        out.at(c, r.hi, q.hi) += r.frac * q.frac * g;
      }
    }
  }
  return out;
}

Grid gaussian_blur(const Grid& img, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("gaussian_blur: sigma must be finite and >= 0");
  }
  if (sigma == 0.0) return img;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int d = -radius; d <= radius; ++d) {
    kernel[static_cast<std::size_t>(d + radius)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
  }
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int h = img.height();
  const int w = img.width();
  Grid tmp(h, w, img.channels());
  Grid out(h, w, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          acc += kernel[static_cast<std::size_t>(d + radius)] * img.at(c, y, fold_index(x + d, w));
        }
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          acc += kernel[static_cast<std::size_t>(d + radius)] * tmp.at(c, fold_index(y + d, h), x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Grid project_unit_interval(Grid g) {
  for (double& v : g.values()) v = std::clamp(v, 0.0, 1.0);
  return g;
}

bool within_unit_interval(const Grid& g) {
  return std::all_of(g.values().begin(), g.values().end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

Grid area_downsample(const Grid& src, int target_h, int target_w) {
  check_upsample_dims(target_h, target_w, src.height(), src.width(), "area_downsample");
  if (src.height() == target_h && src.width() == target_w) return src;

  const auto rows = area_weights(src.height(), target_h);
  const auto cols = area_weights(src.width(), target_w);
  Grid out(target_h, target_w, src.channels());
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < target_h; ++y) {
      for (int x = 0; x < target_w; ++x) {
        double acc = 0.0;
        for (const auto& [sy, wy] : rows[static_cast<std::size_t>(y)]) {
          for (const auto& [sx, wx] : cols[static_cast<std::size_t>(x)]) {
            acc += wy * wx * src.at(c, sy, sx);
          }
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

}  // namespace maskforge
