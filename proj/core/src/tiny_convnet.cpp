#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "maskforge/reference_models.hpp"

namespace maskforge {
namespace {

struct Forward {
  std::vector<double> pre;     // [kernels][h][w]
  std::vector<double> pooled;  // [kernels]
  std::vector<double> probs;   // [classes]
};

std::size_t conv_index(const TinyConvNetWeights& w, int k, int c, int dy, int dx) {
  return ((static_cast<std::size_t>(k) * w.in_channels + c) * w.kernel_size + dy) * w.kernel_size +
         dx;
}

Forward forward(const TinyConvNetWeights& w, const Grid& image) {
  const int h = image.height();
  const int wd = image.width();
  const int r = w.kernel_size / 2;
  const std::size_t plane = image.plane_size();
  Forward f;
  f.pre.assign(static_cast<std::size_t>(w.kernels) * plane, 0.0);
  f.pooled.assign(static_cast<std::size_t>(w.kernels), 0.0);

  for (int k = 0; k < w.kernels; ++k) {
    double* z = f.pre.data() + static_cast<std::size_t>(k) * plane;
    std::fill(z, z + plane, w.conv_bias[static_cast<std::size_t>(k)]);
    for (int c = 0; c < w.in_channels; ++c) {
      for (int dy = 0; dy < w.kernel_size; ++dy) {
        for (int dx = 0; dx < w.kernel_size; ++dx) {
          const double wt = w.conv[conv_index(w, k, c, dy, dx)];
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy - r;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < wd; ++x) {
              const int sx = x + dx - r;
              if (sx < 0 || sx >= wd) continue;
              z[static_cast<std::size_t>(y) * wd + x] += wt * image.at(c, sy, sx);
            }
          }
        }
      }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += std::max(0.0, z[i]);
    f.pooled[static_cast<std::size_t>(k)] = acc / static_cast<double>(plane);
  }

  std::vector<double> logits(static_cast<std::size_t>(w.classes));
  for (int j = 0; j < w.classes; ++j) {
    double l = w.head_bias[static_cast<std::size_t>(j)];
    for (int k = 0; k < w.kernels; ++k) {
      l += w.head[static_cast<std::size_t>(j) * w.kernels + k] * f.pooled[static_cast<std::size_t>(k)];
    }
    logits[static_cast<std::size_t>(j)] = l;
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - peak);
    total += l;
  }
  for (double& l : logits) l /= total;
  f.probs = std::move(logits);
  return f;
}

// Gradient of the loss w.r.t. pre-activations given dL/dlogits.
std::vector<double> backprop_to_pre(const TinyConvNetWeights& w, const Forward& f,
                                    const std::vector<double>& dlogits, std::size_t plane) {
  std::vector<double> dpre(f.pre.size(), 0.0);
  for (int k = 0; k < w.kernels; ++k) {
    double dpooled = 0.0;
    for (int j = 0; j < w.classes; ++j) {
      dpooled += dlogits[static_cast<std::size_t>(j)] * w.head[static_cast<std::size_t>(j) * w.kernels + k];
    }
    const double per_unit = dpooled / static_cast<double>(plane);
    const std::size_t base = static_cast<std::size_t>(k) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (f.pre[base + i] > 0.0) dpre[base + i] = per_unit;
    }
  }
  return dpre;
}

}  // namespace

TinyConvNetWeights TinyConvNetWeights::random(int in_channels, int kernels, int kernel_size,
                                              int classes, std::uint64_t seed) {
  TinyConvNetWeights w;
  w.in_channels = in_channels;
  w.kernels = kernels;
  w.kernel_size = kernel_size;
  w.classes = classes;
  std::mt19937_64 rng(seed);
  const double conv_scale = std::sqrt(2.0 / (in_channels * kernel_size * kernel_size));
  std::normal_distribution<double> conv_init(0.0, conv_scale);
  std::normal_distribution<double> head_init(0.0, 1.0 / std::sqrt(static_cast<double>(kernels)));
  w.conv.resize(static_cast<std::size_t>(kernels) * in_channels * kernel_size * kernel_size);
  for (double& v : w.conv) v = conv_init(rng);
  w.conv_bias.assign(static_cast<std::size_t>(kernels), 0.01);
  w.head.resize(static_cast<std::size_t>(classes) * kernels);
  for (double& v : w.head) v = head_init(rng);
  w.head_bias.assign(static_cast<std::size_t>(classes), 0.0);
  return w;
}

void TinyConvNetWeights::validate() const {
  if (in_channels <= 0 || kernels <= 0 || classes <= 0 || kernel_size <= 0 || kernel_size % 2 == 0) {
    throw std::invalid_argument("TinyConvNetWeights: invalid layer sizes");
  }
  if (conv.size() != static_cast<std::size_t>(kernels) * in_channels * kernel_size * kernel_size ||
      conv_bias.size() != static_cast<std::size_t>(kernels) ||
      head.size() != static_cast<std::size_t>(classes) * kernels ||
      head_bias.size() != static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("TinyConvNetWeights: parameter arrays do not match layer sizes");
  }
}

TinyConvNetModel::TinyConvNetModel(InputShape shape, TinyConvNetWeights weights)
    : shape_(shape), weights_(std::move(weights)) {
  weights_.validate();
  if (shape.height <= 0 || shape.width <= 0 || shape.channels != weights_.in_channels) {
    throw std::invalid_argument("TinyConvNetModel: input shape does not match conv channels");
  }
}

std::vector<double> TinyConvNetModel::probabilities(const Grid& image) const {
  validate(image, 0);
  return forward(weights_, image).probs;
}

double TinyConvNetModel::min_abs_preactivation(const Grid& image) const {
  validate(image, 0);
  const Forward f = forward(weights_, image);
  double best = std::numeric_limits<double>::infinity();
  for (double z : f.pre) best = std::min(best, std::abs(z));
  return best;
}

double TinyConvNetModel::do_score(const Grid& image, int class_id) const {
  return forward(weights_, image).probs[static_cast<std::size_t>(class_id)];
}

Grid TinyConvNetModel::do_input_gradient(const Grid& image, int class_id) const {
  const TinyConvNetWeights& w = weights_;
  const Forward f = forward(w, image);
  const double pc = f.probs[static_cast<std::size_t>(class_id)];
  std::vector<double> dlogits(static_cast<std::size_t>(w.classes));
  for (int j = 0; j < w.classes; ++j) {
    dlogits[static_cast<std::size_t>(j)] = pc * ((j == class_id ? 1.0 : 0.0) - f.probs[static_cast<std::size_t>(j)]);
  }
  const std::size_t plane = image.plane_size();
  const auto dpre = backprop_to_pre(w, f, dlogits, plane);

  const int h = image.height();
  const int wd = image.width();
  const int r = w.kernel_size / 2;
  Grid grad(h, wd, image.channels());
  for (int k = 0; k < w.kernels; ++k) {
    const double* dz = dpre.data() + static_cast<std::size_t>(k) * plane;
    for (int c = 0; c < w.in_channels; ++c) {
      for (int dy = 0; dy < w.kernel_size; ++dy) {
        for (int dx = 0; dx < w.kernel_size; ++dx) {
          const double wt = w.conv[conv_index(w, k, c, dy, dx)];
          for (int y = 0; y < h; ++y) {
            const int sy = y + dy - r;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < wd; ++x) {
              const int sx = x + dx - r;
              if (sx < 0 || sx >= wd) continue;
              grad.at(c, sy, sx) += wt * dz[static_cast<std::size_t>(y) * wd + x];
            }
          }
        }
      }
    }
  }
  return grad;
}

TinyConvNetModel train_tiny_convnet(const std::vector<LabeledImage>& data,
                                    const TrainingConfig& cfg, TrainingReport* report) {
  if (data.empty()) throw std::invalid_argument("train_tiny_convnet: empty dataset");
  const Grid& first = data.front().image;
  for (const auto& item : data) {
    if (!item.image.same_shape(first)) {
      throw std::invalid_argument("train_tiny_convnet: images differ in shape");
    }
    if (item.label < 0 || item.label > 1) {
      throw std::invalid_argument("train_tiny_convnet: labels must be 0 or 1");
    }
  }
  const InputShape shape{first.height(), first.width(), first.channels()};
  TinyConvNetWeights w =
      TinyConvNetWeights::random(shape.channels, cfg.kernels, cfg.kernel_size, 2, cfg.seed);
  const std::size_t plane = first.plane_size();
  const int r = w.kernel_size / 2;
  const double inv_n = 1.0 / static_cast<double>(data.size());

  double loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<double> g_conv(w.conv.size(), 0.0);
    std::vector<double> g_conv_bias(w.conv_bias.size(), 0.0);
    std::vector<double> g_head(w.head.size(), 0.0);
    std::vector<double> g_head_bias(w.head_bias.size(), 0.0);
    loss = 0.0;

    for (const auto& item : data) {
      const Forward f = forward(w, item.image);
      loss -= std::log(std::max(1e-300, f.probs[static_cast<std::size_t>(item.label)])) * inv_n;
      std::vector<double> dlogits(f.probs);
      dlogits[static_cast<std::size_t>(item.label)] -= 1.0;
      for (double& d : dlogits) d *= inv_n;

      for (int j = 0; j < w.classes; ++j) {
        g_head_bias[static_cast<std::size_t>(j)] += dlogits[static_cast<std::size_t>(j)];
        for (int k = 0; k < w.kernels; ++k) {
          g_head[static_cast<std::size_t>(j) * w.kernels + k] +=
              dlogits[static_cast<std::size_t>(j)] * f.pooled[static_cast<std::size_t>(k)];
        }
      }

      const auto dpre = backprop_to_pre(w, f, dlogits, plane);
      const int h = item.image.height();
      const int wd = item.image.width();
      for (int k = 0; k < w.kernels; ++k) {
        const double* dz = dpre.data() + static_cast<std::size_t>(k) * plane;
        double bias_acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bias_acc += dz[i];
        g_conv_bias[static_cast<std::size_t>(k)] += bias_acc;
        for (int c = 0; c < w.in_channels; ++c) {
          for (int dy = 0; dy < w.kernel_size; ++dy) {
            for (int dx = 0; dx < w.kernel_size; ++dx) {
              double acc = 0.0;
              for (int y = 0; y < h; ++y) {
                const int sy = y + dy - r;
                if (sy < 0 || sy >= h) continue;
                for (int x = 0; x < wd; ++x) {
                  const int sx = x + dx - r;
                  if (sx < 0 || sx >= wd) continue;
                  acc += dz[static_cast<std::size_t>(y) * wd + x] * item.image.at(c, sy, sx);
                }
              }
              g_conv[conv_index(w, k, c, dy, dx)] += acc;
            }
          }
        }
      }
    }

    const double lr = cfg.learning_rate;
    for (std::size_t i = 0; i < w.conv.size(); ++i) w.conv[i] -= lr * g_conv[i];
    for (std::size_t i = 0; i < w.conv_bias.size(); ++i) w.conv_bias[i] -= lr * g_conv_bias[i];
    for (std::size_t i = 0; i < w.head.size(); ++i) w.head[i] -= lr * g_head[i];
    for (std::size_t i = 0; i < w.head_bias.size(); ++i) w.head_bias[i] -= lr * g_head_bias[i];
  }

  TinyConvNetModel model(shape, std::move(w));
  if (report != nullptr) {
    int correct = 0;
    for (const auto& item : data) {
      const auto p = model.probabilities(item.image);
      if ((p[1] > p[0] ? 1 : 0) == item.label) ++correct;
    }
    report->final_loss = loss;
    report->train_accuracy = static_cast<double>(correct) * inv_n;
  }
  return model;
}

}  // namespace maskforge
