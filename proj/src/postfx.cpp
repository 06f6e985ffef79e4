#include "rigsynth/postfx.hpp"

#include "rigsynth/error.hpp"

#include <algorithm>

namespace rigsynth {

void SmoothConfig::validate() const {
  if (window < 1 || window % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "savgol window must be a positive odd number");
  }
  if (order < 0 || order >= window) {
    throw Error(ErrorCode::InvalidArgument, "savgol order must satisfy 0 <= order < window");
  }
}

Eigen::VectorXd savgol_coeffs(int window, int order) {
  SmoothConfig{window, order}.validate();
  const int half = window / 2;
  // Vandermonde design over offsets -half..half; the smoothed centre value is
  // e0^T (A^T A)^-1 A^T y, so the weights are A (A^T A)^-1 e0.
  // Offsets are scaled to [-1, 1] for conditioning; the centre weights do not
  // depend on the abscissa scale.
  const double scale = half > 0 ? 1.0 / half : 1.0;
  Eigen::MatrixXd a(window, order + 1);
  for (int i = 0; i < window; ++i) {
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      a(i, j) = p;
      p *= (i - half) * scale;
    }
  }
  const Eigen::MatrixXd gram = a.transpose() * a;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(order + 1);
  e0[0] = 1.0;
  return a * gram.ldlt().solve(e0);
}

RigSequence smooth_sequence(const RigSequence& seq, const SmoothConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = seq.frames();
  if (n <= 1) return seq;
  int window = cfg.window;
  if (window > n) window = static_cast<int>(n % 2 == 1 ? n : n - 1);
  const int order = std::min(cfg.order, window - 1);
  if (window == 1) return seq;

  const Eigen::VectorXd w = savgol_coeffs(window, order);
  const Eigen::Index half = window / 2;
  auto reflect = [n](Eigen::Index i) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  RigSequence out = seq;
  for (Eigen::Index c = 0; c < seq.channels(); ++c) {
    for (Eigen::Index t = 0; t < n; ++t) {
      double acc = 0.0;
      for (Eigen::Index k = -half; k <= half; ++k) acc += w[k + half] * seq.values(reflect(t + k), c);
      out.values(t, c) = acc;
    }
  }
  return out;
}

RigSequence clamp_sequence(const RigSequence& seq, const ControllerMap& map) {
  if (seq.channels() != map.size()) {
    throw Error(ErrorCode::ShapeMismatch, "rig sequence width does not match controller map");
  }
  RigSequence out = seq;
  for (const auto& e : map.entries()) {
    out.values.col(e.index) = out.values.col(e.index).cwiseMax(e.min).cwiseMin(e.max);
  }
  return out;
}

}  // namespace rigsynth
