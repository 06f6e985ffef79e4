#pragma once

// Savitzky-Golay smoothing and bound clamping of predicted rig sequences.

#include "rigsynth/rig.hpp"

#include <Eigen/Dense>

namespace rigsynth {

struct SmoothConfig {
  int window = 15;  // odd
  int order = 3;    // < window

  void validate() const;
};

// Least-squares polynomial smoothing weights evaluated at the window centre.
// Weight k applies to offset k - window/2.
Eigen::VectorXd savgol_coeffs(int window, int order);

// Per-channel convolution with reflect padding (x[-k] = x[k]). Sequences
// shorter than the window fall back to the largest odd window that fits,
// with the order capped below it.
RigSequence smooth_sequence(const RigSequence& seq, const SmoothConfig& cfg = {});

// Clips each channel to its controller [min, max].
RigSequence clamp_sequence(const RigSequence& seq, const ControllerMap& map);

}  // namespace rigsynth
