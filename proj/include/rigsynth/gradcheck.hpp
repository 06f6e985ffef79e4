#pragma once

#include "rigsynth/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rigsynth {

struct GradCheckProbe {
  Eigen::MatrixXd features;
  EmotionTimeline labels;
  Eigen::MatrixXd target;
};

// Random features, labels and targets sized for `model`.
GradCheckProbe make_probe(const Audio2RigModel& model, Eigen::Index frames, std::uint64_t seed);

struct TensorGradError {
  std::string name;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||, abs_floor)
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  double max_abs_analytic = 0.0;
  std::vector<TensorGradError> tensors;
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Only tensors whose name starts with this prefix are checked.
  std::optional<std::string> prefix;
  // Cap on probed entries per tensor (evenly strided); 0 probes all.
  Eigen::Index max_entries = 0;
  // Denominator floor. Some gradients are exactly zero (attention key biases
  // shift every score in a row equally), and their finite differences are
  // pure rounding noise of order 1e-11.
  double abs_floor = 1e-6;
};

// Compares backward() against central differences of the MSE loss for the
// probe. Dropout is forced off.
GradCheckReport grad_check(const Audio2RigModel& model, const GradCheckProbe& probe,
                           const GradCheckOptions& opts = {});

}  // namespace rigsynth
