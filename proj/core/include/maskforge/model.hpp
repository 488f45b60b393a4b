#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskforge/grid.hpp"

namespace maskforge {

struct InputShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// Black-box classifier oracle.
///
/// score() returns a post-softmax (or post-sigmoid) confidence in [0, 1] and
/// input_gradient() its exact derivative with respect to every input value.
/// The public entry points validate the image shape and class id, then
/// dispatch to the do_* hooks. Batched entry points default to a loop; remote
/// models override them to amortize round trips.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual InputShape input_shape() const = 0;
  virtual int num_classes() const = 0;

  double score(const Grid& image, int class_id) const;
  Grid input_gradient(const Grid& image, int class_id) const;

  std::vector<double> scores(std::span<const Grid> images, int class_id) const;
  std::vector<Grid> input_gradients(std::span<const Grid> images, int class_id) const;

  /// Scores for every class, used to resolve "argmax" class selection.
  std::vector<double> all_scores(const Grid& image) const;

 protected:
  virtual double do_score(const Grid& image, int class_id) const = 0;
  virtual Grid do_input_gradient(const Grid& image, int class_id) const = 0;
  virtual std::vector<double> do_scores(std::span<const Grid> images, int class_id) const;
  virtual std::vector<Grid> do_input_gradients(std::span<const Grid> images, int class_id) const;

  void validate(const Grid& image, int class_id) const;
};

int argmax_class(const ScoreModel& model, const Grid& image);

/// Compares input_gradient with central finite differences on up to
/// `max_coordinates` coordinates drawn uniformly without replacement.
/// Returns max |analytic - numeric| / max(1e-8, |numeric|).
double check_gradient(const ScoreModel& model, const Grid& image, int class_id, double eps,
                      int max_coordinates = 256, std::uint64_t seed = 0);

}  // namespace maskforge
